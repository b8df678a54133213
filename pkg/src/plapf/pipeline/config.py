"""Experiment configuration: JSON file -> validated :class:`ExperimentConfig`.

Example::

    {
      "task": "classify",
      "seed": 0,
      "repeats": 3,
      "dataset": {"path": "data/cora"},
      "framelet": {"bank": "linear", "L": 1, "s": 2.0, "mode": "chebyshev", "n": 3},
      "penalty": {"kind": "power", "p": 2.0, "epsilon": 0.001},
      "solver": {"mu": 1.0, "T": 5, "warmup": 10, "tol": 1e-6},
      "model": {"variants": ["pl_ufg", "pl_fufg"], "epochs": 200, "lr": 0.01},
      "grids": {"p": [1.5, 2.0, 2.5], "mu": [0.1, 0.5, 1, 5, 10]}
    }

``dataset`` takes either ``path`` (a dataset directory) or ``synthetic``
(``{"kind": "sbm" | "smooth" | "cliques", ...}``).
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import ConfigError
from ..models import VARIANTS
from ..plap import PenaltySpec, SolverConfig

TASKS = ("verify", "denoise", "classify", "stats")
GRID_KEYS = ("p", "mu", "s", "n", "T", "lr", "sigma")
P_MAX = 2.5


@dataclass(frozen=True)
class FrameletSettings:
    bank: str = "linear"
    L: int = 1
    s: float = 2.0
    mode: str = "chebyshev"
    n: int = 3


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "verify"
    seed: int = 0
    repeats: int = 1
    workers: int = 1
    output: str = "plapf_out"
    dataset: dict = field(default_factory=dict)
    framelet: FrameletSettings = field(default_factory=FrameletSettings)
    penalty: PenaltySpec = field(default_factory=PenaltySpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    variants: tuple = VARIANTS
    routes: tuple = ("spreading", "head")
    epochs: int = 200
    lr: float = 0.01
    gain_grid: tuple = (0.0, 0.5, 1.0, 2.0)
    sigma: float = 0.5
    grids: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)

    def grid_points(self):
        """Cartesian product of the configured grids, first key slowest.

        Keys follow :data:`GRID_KEYS` order; a key without a grid takes its
        base value, so every point is a complete dict.
        """
        base = self.base_values()
        keys = [k for k in GRID_KEYS if k in self.grids]
        points = []
        for combo in itertools.product(*(self.grids[k] for k in keys)):
            pt = dict(base)
            pt.update(zip(keys, combo))
            points.append(pt)
        return points

    def base_values(self):
        return {
            "p": self.penalty.p, "mu": self.solver.mu, "s": self.framelet.s,
            "n": self.framelet.n, "T": self.solver.T, "lr": self.lr, "sigma": self.sigma,
        }

    def grid_keys(self):
        return [k for k in GRID_KEYS if k in self.grids]

    def penalty_at(self, pt) -> PenaltySpec:
        return replace(self.penalty, p=float(pt["p"]))

    def solver_at(self, pt) -> SolverConfig:
        return replace(self.solver, mu=float(pt["mu"]), T=int(pt["T"]))

    def to_dict(self) -> dict:
        return {
            "task": self.task, "seed": self.seed, "repeats": self.repeats,
            "dataset": self.dataset,
            "framelet": vars(self.framelet).copy(),
            "penalty": {"kind": self.penalty.kind, "p": self.penalty.p, "epsilon": self.penalty.epsilon},
            "solver": {"mu": self.solver.mu, "T": self.solver.T, "warmup": self.solver.warmup,
                       "tol": self.solver.tol, "grad_floor": self.solver.grad_floor},
            "model": {"variants": list(self.variants), "routes": list(self.routes),
                      "epochs": self.epochs, "lr": self.lr, "gain_grid": list(self.gain_grid)},
            "denoise": {"sigma": self.sigma},
            "grids": self.grids,
            "verify": self.verify,
        }


def _section(doc, name):
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"'{name}' must be an object")
    return sec


def _pick(sec, name, allowed):
    extra = set(sec) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in '{name}': {sorted(extra)}")
    return {k: sec[k] for k in allowed if k in sec}


def _check_p(p, kind):
    if kind == "power" and not (1.0 < p <= P_MAX):
        raise ConfigError(f"p = {p} outside (1, {P_MAX}] for the power penalty "
                          "(use penalty kind 'reg_tv' for p = 1)")
    if kind == "reg_tv" and not (1.0 <= p <= P_MAX):
        raise ConfigError(f"p = {p} outside [1, {P_MAX}]")


def _validate_grids(grids, penalty_kind):
    if not isinstance(grids, dict):
        raise ConfigError("'grids' must be an object")
    out = {}
    for key, values in grids.items():
        if key not in GRID_KEYS:
            raise ConfigError(f"unknown grid '{key}' (allowed: {GRID_KEYS})")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid '{key}' must be a non-empty list")
        for v in values:
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"grid '{key}' has a non-numeric value {v!r}")
            if key == "p":
                _check_p(float(v), penalty_kind)
            elif key == "mu" and not v > 0:
                raise ConfigError(f"mu grid value {v} must be positive")
            elif key == "s" and not v > 1:
                raise ConfigError(f"dilation grid value {v} must exceed 1")
            elif key in ("n", "T") and (int(v) != v or v < (0 if key == "n" else 1)):
                raise ConfigError(f"grid '{key}' needs integers >= {0 if key == 'n' else 1}, got {v}")
            elif key == "lr" and v < 0:
                raise ConfigError(f"learning rate {v} must be >= 0")
            elif key == "sigma" and v < 0:
                raise ConfigError(f"noise level sigma = {v} must be >= 0")
        out[key] = [int(v) if key in ("n", "T") else float(v) for v in values]
    return out


def parse_config(doc: dict, task: str | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = {"task", "seed", "repeats", "workers", "output", "dataset", "framelet", "penalty",
             "solver", "model", "grids", "denoise", "verify"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    task = task or doc.get("task", "verify")
    if task not in TASKS:
        raise ConfigError(f"unknown task '{task}' (choose from {TASKS})")

    dataset = _pick(_section(doc, "dataset"), "dataset",
                    ("path", "synthetic", "directed", "symmetrize", "ratios", "name"))
    if "path" in dataset and "synthetic" in dataset:
        raise ConfigError("dataset needs either 'path' or 'synthetic', not both")

    try:
        fw = FrameletSettings(**_pick(_section(doc, "framelet"), "framelet", ("bank", "L", "s", "mode", "n")))
        pen = PenaltySpec(**_pick(_section(doc, "penalty"), "penalty", ("kind", "p", "epsilon")))
        sol = SolverConfig(**_pick(_section(doc, "solver"), "solver", ("mu", "T", "warmup", "tol", "grad_floor")))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if fw.mode not in ("exact", "chebyshev"):
        raise ConfigError(f"framelet mode must be 'exact' or 'chebyshev', got {fw.mode!r}")
    if not fw.s > 1:
        raise ConfigError(f"dilation s must exceed 1, got {fw.s}")
    if fw.L < 0 or fw.n < 0:
        raise ConfigError("framelet L and n must be >= 0")
    _check_p(pen.p, pen.kind)

    model = _pick(_section(doc, "model"), "model", ("variants", "routes", "epochs", "lr", "gain_grid"))
    variants = tuple(model.get("variants", VARIANTS))
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant '{v}' (choose from {VARIANTS})")
    routes = tuple(model.get("routes", ("spreading", "head")))
    for r in routes:
        if r not in ("spreading", "head"):
            raise ConfigError(f"unknown route '{r}'")
    epochs = int(model.get("epochs", 200))
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    lr = float(model.get("lr", 0.01))
    if lr < 0:
        raise ConfigError("learning rate must be >= 0")

    denoise = _pick(_section(doc, "denoise"), "denoise", ("sigma",))
    sigma = float(denoise.get("sigma", 0.5))
    if sigma < 0:
        raise ConfigError(f"noise level sigma = {sigma} must be >= 0")

    repeats = int(doc.get("repeats", 1))
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    workers = int(doc.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers must be >= 1")

    return ExperimentConfig(
        task=task,
        seed=int(doc.get("seed", 0)),
        repeats=repeats,
        workers=workers,
        output=str(doc.get("output", "plapf_out")),
        dataset=dataset,
        framelet=fw,
        penalty=pen,
        solver=sol,
        variants=variants,
        routes=routes,
        epochs=epochs,
        lr=lr,
        gain_grid=tuple(float(x) for x in model.get("gain_grid", (0.0, 0.5, 1.0, 2.0))),
        sigma=sigma,
        grids=_validate_grids(doc.get("grids", {}), pen.kind),
        verify=_section(doc, "verify"),
    )


def load_config(path, task: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    cfg = parse_config(doc, task)
    if "path" in cfg.dataset:
        p = Path(cfg.dataset["path"])
        if not p.is_absolute():
            cfg.dataset["path"] = str((path.parent / p).resolve())
    return cfg
