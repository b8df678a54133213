"""pL-UFG, its per-band variant and pL-fUFG forward passes, plus a small
trainer that picks per-block gains and fits a softmax head on top."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError, TrainingError
from .framelet import FrameletSystem, _theta_blocks, decompose, framelet_conv, scale_rows
from .graph import Dataset
from .plap import PenaltySpec, SolverConfig, solve

VARIANTS = ("pl_ufg", "pl_ufg_per_band", "pl_fufg")
DEFAULT_GAIN_GRID = (0.0, 0.5, 1.0, 2.0)


@dataclass(frozen=True, eq=False)
class ModelConfig:
    variant: str
    system: FrameletSystem
    theta: tuple
    penalty: PenaltySpec = field(default_factory=PenaltySpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    band_solvers: tuple | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}' (choose from {VARIANTS})")
        object.__setattr__(self, "theta", tuple(_theta_blocks(self.system, self.theta)))
        if self.band_solvers is not None and len(self.band_solvers) != self.system.n_blocks:
            raise ConfigError("band_solvers needs one SolverConfig per block")

    @classmethod
    def with_ones(cls, variant, system, **kw):
        return cls(variant, system, tuple(np.ones(system.n_blocks)), **kw)

    def solver_for(self, b: int) -> SolverConfig:
        return self.band_solvers[b] if self.band_solvers is not None else self.solver

    def with_gains(self, gains) -> "ModelConfig":
        if len(gains) != self.system.n_blocks:
            raise ShapeError("one gain per block")
        return replace(self, theta=tuple(float(gn) * np.ones(self.system.n_nodes) for gn in gains))


@dataclass
class ModelOutput:
    F: np.ndarray
    traces: list


def forward_pl_ufg(cfg: ModelConfig, X) -> ModelOutput:
    """Smooth the framelet-filtered signal W^T diag(theta) W X."""
    Y = framelet_conv(cfg.system, cfg.theta, X)
    F, trace = solve(cfg.system.graph, Y, cfg.penalty, cfg.solver)
    return ModelOutput(F, [trace])


def forward_pl_ufg_per_band(cfg: ModelConfig, X) -> ModelOutput:
    """Smooth each band reconstruction W_b^T diag(theta_b) W_b X separately and sum."""
    sys = cfg.system
    coeffs = decompose(sys, X)
    F = None
    traces = []
    for b, C in enumerate(coeffs.blocks):
        Yb = sys.apply_block_transpose(b, scale_rows(cfg.theta[b], C))
        Fb, tr = solve(sys.graph, Yb, cfg.penalty, cfg.solver_for(b))
        F = Fb if F is None else F + Fb
        traces.append(tr)
    return ModelOutput(F, traces)


def forward_pl_fufg(cfg: ModelConfig, X) -> ModelOutput:
    """Smooth each coefficient block diag(theta_b) W_b X, then reconstruct."""
    sys = cfg.system
    coeffs = decompose(sys, X)
    F = None
    traces = []
    for b, C in enumerate(coeffs.blocks):
        Fb, tr = solve(sys.graph, scale_rows(cfg.theta[b], C), cfg.penalty, cfg.solver_for(b))
        R = sys.apply_block_transpose(b, Fb)
        F = R if F is None else F + R
        traces.append(tr)
    return ModelOutput(F, traces)


_FORWARDS = {
    "pl_ufg": forward_pl_ufg,
    "pl_ufg_per_band": forward_pl_ufg_per_band,
    "pl_fufg": forward_pl_fufg,
}


def forward(cfg: ModelConfig, X) -> ModelOutput:
    return _FORWARDS[cfg.variant](cfg, X)


def _softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


class SoftmaxHead:
    """Multinomial logistic regression on standardized features, trained with Adam."""

    def __init__(self, weight, bias, mean, scale):
        self.weight = weight
        self.bias = bias
        self.mean = mean
        self.scale = scale

    @classmethod
    def init(cls, Z, n_classes, rng):
        mean = Z.mean(axis=0)
        scale = Z.std(axis=0)
        scale[scale == 0] = 1.0
        f = Z.shape[1]
        W = rng.normal(0.0, 1.0 / np.sqrt(f), size=(f, n_classes))
        return cls(W, np.zeros(n_classes), mean, scale)

    def copy(self):
        return SoftmaxHead(self.weight.copy(), self.bias.copy(), self.mean.copy(), self.scale.copy())

    def logits(self, Z):
        return ((Z - self.mean) / self.scale) @ self.weight + self.bias

    def predict(self, Z):
        return np.argmax(self.logits(Z), axis=1)

    def train(self, Z, y, mask, epochs, lr, weight_decay=5e-4):
        Zs = ((Z - self.mean) / self.scale)[mask]
        onehot = np.eye(self.weight.shape[1])[y[mask]]
        m = Zs.shape[0]
        params = [self.weight, self.bias]
        mom = [np.zeros_like(p) for p in params]
        vel = [np.zeros_like(p) for p in params]
        b1, b2, eps = 0.9, 0.999, 1e-8
        for t in range(1, epochs + 1):
            P = _softmax(Zs @ self.weight + self.bias)
            G = (P - onehot) / m
            grads = [Zs.T @ G + weight_decay * self.weight, G.sum(axis=0)]
            for p, g, m1, v1 in zip(params, grads, mom, vel):
                m1 *= b1
                m1 += (1 - b1) * g
                v1 *= b2
                v1 += (1 - b2) * g * g
                p -= lr * (m1 / (1 - b1**t)) / (np.sqrt(v1 / (1 - b2**t)) + eps)
        return self

    def save(self, directory) -> Path:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        for name, arr in (("weight", self.weight), ("bias", self.bias[None, :]),
                          ("mean", self.mean[None, :]), ("scale", self.scale[None, :])):
            np.savetxt(root / f"{name}.csv", arr, delimiter=",", fmt="%.17g")
        manifest = {"n_features": int(self.weight.shape[0]), "n_classes": int(self.weight.shape[1]),
                    "files": ["weight.csv", "bias.csv", "mean.csv", "scale.csv"]}
        (root / "head.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
        return root

    @classmethod
    def load(cls, directory):
        root = Path(directory)
        manifest = json.loads((root / "head.json").read_text(encoding="utf-8"))
        W = np.loadtxt(root / "weight.csv", delimiter=",", ndmin=2)
        if W.shape != (manifest["n_features"], manifest["n_classes"]):
            raise ShapeError("weight.csv does not match head.json")
        vec = [np.loadtxt(root / f"{k}.csv", delimiter=",", ndmin=1) for k in ("bias", "mean", "scale")]
        return cls(W, *vec)


def accuracy(pred, labels, mask) -> float:
    if not mask.any():
        return float("nan")
    return float(np.mean(pred[mask] == labels[mask]))


def majority_accuracy(ds: Dataset, mask) -> float:
    """Accuracy of always predicting the most common training label."""
    major = np.bincount(ds.labels[ds.train_mask], minlength=ds.n_classes).argmax()
    return accuracy(np.full(ds.graph.n_nodes, major), ds.labels, mask)


@dataclass
class FitResult:
    gains: tuple
    head: SoftmaxHead
    metrics: dict
    initial_head: SoftmaxHead


def fit_theta_and_head(cfg: ModelConfig, ds: Dataset, epochs: int = 200, lr: float = 0.01,
                       seed: int = 0, gain_grid=DEFAULT_GAIN_GRID, sweeps: int = 1) -> FitResult:
    """Pick one scalar gain per block by coordinate search and train a head.

    Every candidate gain vector is scored by training a fresh head (same seed)
    on the model output of the training nodes and measuring validation
    accuracy; the first best candidate wins ties. Gains start at 1.
    """
    if epochs < 1:
        raise TrainingError("epochs must be >= 1")
    train_labels = ds.labels[ds.train_mask]
    if train_labels.size == 0 or np.unique(train_labels).size < 2:
        raise TrainingError("training split needs at least two classes")
    if ds.graph is not cfg.system.graph and ds.graph.n_nodes != cfg.system.n_nodes:
        raise ShapeError("dataset graph does not match the framelet system")

    cache = {}

    def score(gains):
        key = tuple(gains)
        if key not in cache:
            Z = forward(cfg.with_gains(gains), ds.features).F
            rng = np.random.default_rng(seed)
            head0 = SoftmaxHead.init(Z, ds.n_classes, rng)
            head = head0.copy().train(Z, ds.labels, ds.train_mask, epochs, lr)
            pred = head.predict(Z)
            cache[key] = (accuracy(pred, ds.labels, ds.val_mask), head, head0, pred)
        return cache[key]

    gains = [1.0] * cfg.system.n_blocks
    best = score(gains)
    for _ in range(sweeps):
        for b in range(cfg.system.n_blocks):
            for gv in gain_grid:
                cand = list(gains)
                cand[b] = float(gv)
                res = score(cand)
                if res[0] > best[0]:
                    best, gains = res, cand
    val_acc, head, head0, pred = best
    metrics = {
        "train_acc": accuracy(pred, ds.labels, ds.train_mask),
        "val_acc": val_acc,
        "test_acc": accuracy(pred, ds.labels, ds.test_mask),
        "majority_val": majority_accuracy(ds, ds.val_mask),
        "majority_test": majority_accuracy(ds, ds.test_mask),
        "evaluations": len(cache),
    }
    return FitResult(tuple(gains), head, metrics, head0)
