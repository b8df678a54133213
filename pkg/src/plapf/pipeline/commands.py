"""Task runners behind the ``plapf`` CLI.

Each ``cmd_*`` returns a :class:`RunReport` whose CSV rows depend only on
(config, seed); timing and environment details go to the JSON summary.
"""
from __future__ import annotations

import csv
import json
import logging
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..errors import ConfigError
from ..filters import builtin_bank, resolve_bank, verify_identity, IDENTITY_TOL, CUSTOM_IDENTITY_TOL
from ..framelet import DENSE_CAP, build_system, roundtrip_error
from ..graph import Dataset, homophily, load_dataset, random_split
from ..models import ModelConfig, fit_theta_and_head, forward, majority_accuracy, accuracy
from ..plap import PenaltySpec, SolverConfig, closed_form_p2, iteration_matrix_p2, solve
from ..synthetic import make_synthetic, path_graph, random_graph
from .config import ExperimentConfig

log = logging.getLogger(__name__)

# Dataset statistics (classes, features, nodes, edges, homophily) of the
# standard benchmarks, used by ``stats`` to print a reference column.
REFERENCE_STATS = {
    "cora": (7, 1433, 2708, 5278, 0.825),
    "citeseer": (6, 3703, 3327, 4552, 0.717),
    "pubmed": (3, 500, 19717, 44324, 0.792),
    "wisconsin": (5, 251, 499, 1703, 0.150),
    "texas": (5, 1703, 183, 279, 0.097),
    "cornell": (5, 1703, 183, 277, 0.386),
}

TIGHT_FRAME_TOL = 1e-8
ROUNDTRIP_TOL = 1e-3
ORACLE_TOL = 1e-6


@dataclass
class RunReport:
    task: str
    columns: list
    rows: list
    run_columns: list = field(default_factory=list)
    runs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    ok: bool = True

    def write(self, out_dir) -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [_write_csv(out / f"{self.task}_report.csv", self.columns, self.rows)]
        if self.runs:
            paths.append(_write_csv(out / f"{self.task}_runs.csv", self.run_columns, self.runs))
        spath = out / f"{self.task}_summary.json"
        spath.write_text(json.dumps(self.summary, indent=2, sort_keys=True, default=_json_default) + "\n",
                         encoding="utf-8")
        paths.append(spath)
        return paths


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def _write_csv(path, columns, rows):
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])
    return path


def _mean_std(values):
    a = np.asarray(values, dtype=float)
    std = float(np.std(a, ddof=1)) if a.size > 1 else float("nan")
    return float(np.mean(a)), std


def environment_stamp() -> dict:
    return {
        "plapf": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


def _pmap(fn, items, workers):
    # Results come back in submission order whatever the completion order.
    if workers <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futures = [ex.submit(fn, *it) for it in items]
        return [f.result() for f in futures]


def load_experiment_dataset(cfg: ExperimentConfig, required: bool = True) -> Dataset | None:
    spec = cfg.dataset
    if "path" in spec:
        ds = load_dataset(spec["path"], directed=spec.get("directed"),
                          ratios=spec.get("ratios"), seed=cfg.seed)
    elif "synthetic" in spec:
        syn = dict(spec["synthetic"])
        if "ratios" in spec and "ratios" not in syn and syn.get("kind") != "cliques":
            syn["ratios"] = spec["ratios"]
        ds = make_synthetic(syn, seed=cfg.seed)
    elif required:
        raise ConfigError("this task needs a 'dataset' section with 'path' or 'synthetic'")
    else:
        return None
    if spec.get("symmetrize") and ds.graph.directed:
        ds = ds.with_graph(ds.graph.symmetrized())
    if "name" in spec:
        ds = Dataset(ds.graph, ds.features, ds.labels, ds.train_mask, ds.val_mask,
                     ds.test_mask, str(spec["name"]), dict(ds.meta))
    return ds


def _system(cfg: ExperimentConfig, graph, s, n, mode=None):
    bank = resolve_bank(cfg.framelet.bank)
    return build_system(graph, bank, cfg.framelet.L, float(s), mode or cfg.framelet.mode, int(n))


# ---------------------------------------------------------------- verify

def _row(suite, case, value, threshold, status):
    return {"suite": suite, "case": case, "value": value, "threshold": threshold, "status": status}


def _verify_graphs(cfg, ds, max_nodes):
    vcfg = cfg.verify
    count = int(vcfg.get("random_graphs", 5))
    lo, hi = vcfg.get("graph_nodes", [10, max_nodes])
    rng = np.random.default_rng([cfg.seed, 7])
    graphs = []
    if ds is not None:
        graphs.append((ds.name, ds.graph))
    for i in range(count):
        n = int(rng.integers(lo, min(hi, max_nodes) + 1))
        graphs.append((f"random{i}_n{n}", random_graph(n, float(rng.uniform(0.05, 0.3)),
                                                       seed=[cfg.seed, i], weighted=bool(i % 2))))
    return graphs


def cmd_verify(cfg: ExperimentConfig, ds: Dataset | None = None) -> RunReport:
    """Filter identity, tight frame, Chebyshev round trip and p = 2 oracle suites."""
    vcfg = cfg.verify
    rows = []
    exact_cap = int(vcfg.get("exact_cap", 500))
    levels = vcfg.get("levels", [0, 1, 2])
    bank_names = list(vcfg.get("banks", ["haar", "linear"]))

    banks = [(name, builtin_bank(name), IDENTITY_TOL) for name in bank_names]
    if cfg.framelet.bank not in bank_names:
        banks.append((cfg.framelet.bank, resolve_bank(cfg.framelet.bank, check=False), CUSTOM_IDENTITY_TOL))

    for name, bank, tol in banks:
        res = verify_identity(bank, 10_000)
        rows.append(_row("filter_identity", name, res, tol, "pass" if res < tol else "fail"))

    for gname, g in _verify_graphs(cfg, ds, 50):
        if g.directed:
            rows.append(_row("tight_frame", gname, None, TIGHT_FRAME_TOL, "skipped (directed)"))
            continue
        if g.n_nodes > exact_cap:
            rows.append(_row("tight_frame", gname, None, TIGHT_FRAME_TOL, "skipped (too large)"))
            continue
        for name, bank, _ in banks:
            for L in levels:
                err = build_system(g, bank, int(L), cfg.framelet.s, "exact").tight_frame_error()
                rows.append(_row("tight_frame", f"{gname}/{name}/L{L}", err, TIGHT_FRAME_TOL,
                                 "pass" if err < TIGHT_FRAME_TOL else "fail"))

    # Chebyshev round trip on the dataset graph (or a 50-node random graph)
    g = ds.graph if ds is not None else random_graph(50, 0.1, seed=[cfg.seed, 11])
    gname = ds.name if ds is not None else "random_n50"
    X = np.random.default_rng([cfg.seed, 13]).standard_normal((g.n_nodes, 4))
    degrees = [int(d) for d in vcfg.get("degrees", [3, 7, 10])]
    bank = resolve_bank(cfg.framelet.bank, check=False)
    errs = []
    for n in degrees:
        sysn = build_system(g, bank, cfg.framelet.L, cfg.framelet.s, "chebyshev", n)
        err = roundtrip_error(sysn, X)
        errs.append(err)
        if g.directed:
            status, thr = "measured (directed)", None
        elif n >= 10:
            thr = ROUNDTRIP_TOL
            status = "pass" if err < thr else "fail"
        else:
            status, thr = "measured", None
        rows.append(_row("chebyshev_roundtrip", f"{gname}/n{n}", err, thr, status))
    if len(errs) > 1:
        worst = max(b - a for a, b in zip(errs, errs[1:]))
        if g.directed:
            status = "measured (directed)"
        else:
            status = "pass" if worst < 0 else "fail"
        rows.append(_row("chebyshev_roundtrip", f"{gname}/decreasing_in_n", worst, 0.0, status))

    # p = 2 oracle
    iters = int(vcfg.get("oracle_iterations", 500))
    mus = vcfg.get("oracle_mu", [0.1, 1.0, 10.0])
    pen = PenaltySpec("power", 2.0)
    path2 = path_graph(2)
    F, _ = solve(path2, np.array([[1.0], [0.0]]), pen, SolverConfig(mu=1.0, T=iters - 10, warmup=10))
    err = float(np.max(np.abs(F.ravel() - [2 / 3, 1 / 3])))
    rows.append(_row("p2_oracle", "path2/mu1", err, ORACLE_TOL, "pass" if err < ORACLE_TOL else "fail"))
    for gname, g in _verify_graphs(cfg, ds, 30):
        if g.directed:
            rows.append(_row("p2_oracle", gname, None, ORACLE_TOL, "skipped (directed)"))
            continue
        if g.n_nodes > DENSE_CAP:
            rows.append(_row("p2_oracle", gname, None, ORACLE_TOL, "skipped (too large)"))
            continue
        Y = np.random.default_rng([cfg.seed, 17]).standard_normal((g.n_nodes, 2))
        for mu in mus:
            F, _ = solve(g, Y, pen, SolverConfig(mu=float(mu), T=iters - 10, warmup=10),
                         record_objective=False)
            ref = closed_form_p2(g, Y, float(mu))
            rel = float(np.linalg.norm(F - ref) / np.linalg.norm(ref))
            rows.append(_row("p2_oracle", f"{gname}/mu{mu:g}", rel, ORACLE_TOL,
                             "pass" if rel < ORACLE_TOL else "fail"))
            if g.n_nodes <= 300:
                rho = float(np.max(np.abs(np.linalg.eigvals(iteration_matrix_p2(g, float(mu))))))
                bound = 1.0 / (1.0 + float(mu))
                rows.append(_row("p2_spectral_radius", f"{gname}/mu{mu:g}", rho, bound,
                                 "pass" if rho <= bound + 1e-12 else "fail"))

    failed = [r for r in rows if r["status"] == "fail"]
    return RunReport(
        "verify", ["suite", "case", "value", "threshold", "status"], rows,
        summary={"checks": len(rows), "failed": len(failed),
                 "failures": [f"{r['suite']}:{r['case']}" for r in failed]},
        ok=not failed,
    )


# ---------------------------------------------------------------- denoise

def _noise(cfg, repeat, shape):
    return np.random.default_rng([cfg.seed, repeat]).standard_normal(shape)


def _denoise_point(cfg: ExperimentConfig, ds: Dataset, pt: dict, repeat: int):
    clean = ds.features
    noisy = clean + pt["sigma"] * _noise(cfg, repeat, clean.shape)
    out = {"noisy_mse": float(np.mean((noisy - clean) ** 2))}
    sysm = _system(cfg, ds.graph, pt["s"], pt["n"])
    for v in cfg.variants:
        mc = ModelConfig.with_ones(v, sysm, penalty=cfg.penalty_at(pt), solver=cfg.solver_at(pt))
        F = forward(mc, noisy).F
        out[f"{v}_mse"] = float(np.mean((F - clean) ** 2))
    return out


def cmd_denoise(cfg: ExperimentConfig, ds: Dataset) -> RunReport:
    """Add seeded Gaussian noise to the features and smooth with each variant."""
    keys = [k for k in ("p", "mu", "s", "n", "T", "sigma")]
    points = cfg.grid_points()
    for pt in points:
        if pt["sigma"] < 0:
            raise ConfigError("sigma must be >= 0")
    tasks = [(cfg, ds, pt, r) for pt in points for r in range(cfg.repeats)]
    results = _pmap(_denoise_point, tasks, cfg.workers)

    metrics = ["noisy_mse"] + [f"{v}_mse" for v in cfg.variants]
    runs = []
    for (_, _, pt, r), res in zip(tasks, results):
        runs.append({**{k: pt[k] for k in keys}, "repeat": r, **res})
    rows = []
    for i, pt in enumerate(points):
        chunk = runs[i * cfg.repeats:(i + 1) * cfg.repeats]
        row = {k: pt[k] for k in keys}
        for mname in metrics:
            row[f"{mname}_mean"], row[f"{mname}_std"] = _mean_std([c[mname] for c in chunk])
        base = row["noisy_mse_mean"]
        for v in cfg.variants:
            row[f"{v}_ratio"] = row[f"{v}_mse_mean"] / base if base > 0 else float("nan")
        rows.append(row)

    columns = keys + [f"{m}_{s}" for m in metrics for s in ("mean", "std")] + [f"{v}_ratio" for v in cfg.variants]
    best = {}
    for v in cfg.variants:
        for sigma in sorted({pt["sigma"] for pt in points}):
            cand = [r for r in rows if r["sigma"] == sigma]
            top = min(cand, key=lambda r: r[f"{v}_mse_mean"])
            best[f"{v}@sigma={sigma:g}"] = {k: top[k] for k in keys} | {
                "mse": top[f"{v}_mse_mean"], "noisy_mse": top["noisy_mse_mean"], "ratio": top[f"{v}_ratio"]}
    return RunReport("denoise", columns, rows, keys + ["repeat"] + metrics, runs,
                     summary={"dataset": ds.summary(), "best": best, "points": len(points),
                              "repeats": cfg.repeats})


# ---------------------------------------------------------------- classify

def _split_for_repeat(cfg, ds, repeat):
    if not ds.meta.get("fixed_splits") and "ratios" in ds.meta:
        return random_split(ds, ds.meta["ratios"], cfg.seed + repeat)
    return ds


def _classify_point(cfg: ExperimentConfig, ds: Dataset, pt: dict, repeat: int):
    dsr = _split_for_repeat(cfg, ds, repeat)
    if not dsr.train_mask.any():
        raise ConfigError("empty training mask")
    out = {"majority_acc": majority_accuracy(dsr, dsr.test_mask)}
    pen, sol = cfg.penalty_at(pt), cfg.solver_at(pt)
    if "spreading" in cfg.routes:
        Y = np.zeros((dsr.graph.n_nodes, dsr.n_classes))
        idx = np.flatnonzero(dsr.train_mask)
        Y[idx, dsr.labels[idx]] = 1.0
        F, _ = solve(dsr.graph, Y, pen, sol, record_objective=False)
        out["spreading_acc"] = accuracy(np.argmax(F, axis=1), dsr.labels, dsr.test_mask)
    if "head" in cfg.routes:
        sysm = _system(cfg, dsr.graph, pt["s"], pt["n"])
        for v in cfg.variants:
            mc = ModelConfig.with_ones(v, sysm, penalty=pen, solver=sol)
            res = fit_theta_and_head(mc, dsr, cfg.epochs, pt["lr"], seed=cfg.seed + repeat,
                                     gain_grid=cfg.gain_grid)
            out[f"{v}_acc"] = res.metrics["test_acc"]
            out[f"{v}_val"] = res.metrics["val_acc"]
    return out


def cmd_classify(cfg: ExperimentConfig, ds: Dataset) -> RunReport:
    """Label spreading and/or framelet features + softmax head over the grid."""
    keys = ["p", "mu", "s", "n", "T", "lr"]
    if not ds.train_mask.any() and "ratios" not in ds.meta:
        raise ConfigError("empty training mask")
    points = cfg.grid_points()
    tasks = [(cfg, ds, pt, r) for pt in points for r in range(cfg.repeats)]
    results = _pmap(_classify_point, tasks, cfg.workers)

    metrics = ["majority_acc"]
    if "spreading" in cfg.routes:
        metrics.append("spreading_acc")
    if "head" in cfg.routes:
        for v in cfg.variants:
            metrics += [f"{v}_acc", f"{v}_val"]
    runs = [{**{k: pt[k] for k in keys}, "repeat": r, **res}
            for (_, _, pt, r), res in zip(tasks, results)]
    rows = []
    for i, pt in enumerate(points):
        chunk = runs[i * cfg.repeats:(i + 1) * cfg.repeats]
        row = {k: pt[k] for k in keys}
        for mname in metrics:
            row[f"{mname}_mean"], row[f"{mname}_std"] = _mean_std([c[mname] for c in chunk])
        rows.append(row)
    columns = keys + [f"{m}_{s}" for m in metrics for s in ("mean", "std")]
    return RunReport("classify", columns, rows, keys + ["repeat"] + metrics, runs,
                     summary={"dataset": ds.summary(), "points": len(points), "repeats": cfg.repeats})


# ---------------------------------------------------------------- stats

def cmd_stats(cfg: ExperimentConfig, ds: Dataset) -> RunReport:
    s = ds.summary()
    h = homophily(ds.graph, ds.labels)
    ref = REFERENCE_STATS.get(ds.name.lower())
    row = {
        "name": s["name"], "nodes": s["nodes"], "edges": s["edges"], "directed": s["directed"],
        "classes": s["classes"], "features": s["features"], "homophily": h,
        "reference_homophily": ref[4] if ref else None,
        "homophily_diff": abs(h - ref[4]) if ref else None,
    }
    columns = list(row)
    return RunReport("stats", columns, [row], summary={"dataset": s, "homophily": h})


COMMANDS = {
    "verify": cmd_verify,
    "denoise": cmd_denoise,
    "classify": cmd_classify,
    "stats": cmd_stats,
}


def run(cfg: ExperimentConfig) -> RunReport:
    start = time.perf_counter()
    ds = load_experiment_dataset(cfg, required=cfg.task != "verify")
    report = COMMANDS[cfg.task](cfg, ds)
    report.summary.update({
        "task": cfg.task,
        "ok": report.ok,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "environment": environment_stamp(),
        "elapsed_seconds": round(time.perf_counter() - start, 3),
        "argv": sys.argv,
    })
    return report
