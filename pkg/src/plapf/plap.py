"""Generalized p-Laplacian regularizer and its message-passing solver.

For a signal F (one row per node) and an edge (i, j)::

    delta_ij = sqrt(w_ij / d_j) f_j - sqrt(w_ij / d_i) f_i
    grad_i   = ( ||delta_ij||_2 )_{j in N(i)}
    S(F)     = 1/2 sum_i phi(||grad_i||_p)

The solver iterates F <- alpha D^{-1/2} M D^{-1/2} F + beta Y, whose fixed
points are exactly the stationary points of S(F) + mu ||F - Y||_F^2.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigError, DegenerateDegreeError, DivergenceError, ShapeError
from .graph import Graph, normalized_laplacian

log = logging.getLogger(__name__)

DENSE_CAP = 3000


@dataclass(frozen=True)
class PenaltySpec:
    """phi(xi) = xi**p (``power``) or sqrt(xi**2 + eps**2) - eps (``reg_tv``).

    ``p`` is also the exponent of the node-gradient norm for ``reg_tv``.
    """

    kind: str = "power"
    p: float = 2.0
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("power", "reg_tv"):
            raise ConfigError(f"unknown penalty kind '{self.kind}'")
        if self.p < 1:
            raise ConfigError(f"p must be >= 1, got {self.p}")
        if self.kind == "power" and self.p <= 1:
            raise ConfigError("power penalty needs p > 1; use reg_tv for the p = 1 surrogate")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")

    def phi(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.kind == "power":
            return xi**self.p
        return np.sqrt(xi**2 + self.epsilon**2) - self.epsilon

    def dphi_ratio(self, xi):
        """phi'(xi) / xi**(p - 1), for xi > 0."""
        xi = np.asarray(xi, dtype=float)
        if self.kind == "power":
            return np.full_like(xi, self.p)
        return xi ** (2.0 - self.p) / np.sqrt(xi**2 + self.epsilon**2)


@dataclass(frozen=True)
class SolverConfig:
    mu: float = 1.0
    T: int = 5
    warmup: int = 10
    tol: float = 1e-6
    grad_floor: float = 1e-8

    def __post_init__(self):
        if not self.mu > 0:
            raise ConfigError(f"mu must be positive, got {self.mu}")
        if self.T < 1 or self.warmup < 0:
            raise ConfigError("T must be >= 1 and warmup >= 0")
        if not (self.tol > 0 and self.grad_floor > 0):
            raise ConfigError("tol and grad_floor must be positive")


@dataclass
class SolverTrace:
    objective: list = field(default_factory=list)
    delta: list = field(default_factory=list)
    phase: list = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.objective)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "phase", "objective", "delta"])
            for t, (ph, obj, dl) in enumerate(zip(self.phase, self.objective, self.delta), start=1):
                w.writerow([t, ph, repr(obj), repr(dl)])
        return path


def _as_2d(F):
    F = np.asarray(F, dtype=float)
    return F[:, None] if F.ndim == 1 else F


def edge_difference(g: Graph, F, i: int, j: int) -> np.ndarray:
    """delta_ij for a stored edge (i, j)."""
    F = _as_2d(F)
    w = g.weights[i, j]
    if w == 0 and j not in g.weights[i].indices:
        raise ValueError(f"({i}, {j}) is not an edge")
    d = g.degrees
    if d[i] <= 0 or d[j] <= 0:
        raise DegenerateDegreeError(f"edge ({i}, {j}) has an endpoint with zero degree")
    return np.sqrt(w / d[j]) * F[j] - np.sqrt(w / d[i]) * F[i]


def _edge_norms(g: Graph, F):
    rows, cols, w = g.arcs
    dis = g.inv_sqrt_degrees
    sw = np.sqrt(w)[:, None]
    diff = sw * (dis[cols, None] * F[cols] - dis[rows, None] * F[rows])
    return rows, cols, w, np.sqrt(np.sum(diff**2, axis=1))


def _node_norms(g: Graph, rows, enorm, p):
    acc = np.bincount(rows, weights=enorm**p, minlength=g.n_nodes)
    return acc ** (1.0 / p)


def node_gradient_norm(g: Graph, F, i: int, p: float) -> float:
    """||grad_i||_p; zero for nodes without neighbours."""
    return float(node_gradient_norms(g, F, p)[i])


def node_gradient_norms(g: Graph, F, p: float) -> np.ndarray:
    if p < 1:
        raise ValueError("p must be >= 1")
    rows, _, _, enorm = _edge_norms(g, _as_2d(F))
    return _node_norms(g, rows, enorm, p)


def regularizer(g: Graph, F, penalty: PenaltySpec) -> float:
    return 0.5 * float(np.sum(penalty.phi(node_gradient_norms(g, F, penalty.p))))


def objective(g: Graph, F, Y, penalty: PenaltySpec, mu: float) -> float:
    """S(F) + mu ||F - Y||_F^2."""
    F, Y = _as_2d(F), _as_2d(Y)
    if F.shape != Y.shape:
        raise ShapeError(f"F {F.shape} and Y {Y.shape} differ in shape")
    return regularizer(g, F, penalty) + mu * float(np.sum((F - Y) ** 2))


def message_matrices(g: Graph, F, penalty: PenaltySpec, mu: float, grad_floor: float = 1e-8):
    """Return ``(M, alpha, beta)`` evaluated at F.

    M is sparse with the edge pattern of W::

        M_ij = w_ij / 2 * [r(N_i) + r(N_j)] * ||delta_ij||**(p - 2)

    where r(x) = phi'(x) / x**(p - 1) and N_i = ||grad_i||_p. Both norms are
    floored at ``grad_floor`` before entering negative powers. ``alpha`` and
    ``beta`` are returned as vectors.
    """
    if not mu > 0:
        raise ConfigError("mu must be positive")
    F = _as_2d(F)
    p = penalty.p
    rows, cols, w, enorm = _edge_norms(g, F)
    nnorm = np.maximum(_node_norms(g, rows, enorm, p), grad_floor)
    ratio = penalty.dphi_ratio(nnorm)
    if p == 2.0:
        epow = np.ones_like(enorm)
    else:
        epow = np.maximum(enorm, grad_floor) ** (p - 2.0)
    vals = 0.5 * w * (ratio[rows] + ratio[cols]) * epow
    M = sp.csr_matrix((vals, (rows, cols)), shape=(g.n_nodes, g.n_nodes))
    d = g.degrees
    msum = np.bincount(rows, weights=vals, minlength=g.n_nodes)
    scaled = np.zeros(g.n_nodes)
    pos = d > 0
    scaled[pos] = msum[pos] / d[pos]
    alpha = 1.0 / (scaled + 2.0 * mu)
    beta = 2.0 * mu * alpha
    return M, alpha, beta


def _step(g, F, Y, penalty, mu, grad_floor):
    M, alpha, beta = message_matrices(g, F, penalty, mu, grad_floor)
    dis = g.inv_sqrt_degrees[:, None]
    return alpha[:, None] * (dis * (M @ (dis * F))) + beta[:, None] * Y


def fixed_point_residual(g: Graph, F, Y, penalty: PenaltySpec, cfg: SolverConfig) -> float:
    """||F - step(F)||_F / ||F||_F with M, alpha, beta evaluated at F."""
    F, Y = _as_2d(F), _as_2d(Y)
    R = F - _step(g, F, Y, penalty, cfg.mu, cfg.grad_floor)
    nf = np.linalg.norm(F)
    return float(np.linalg.norm(R) / nf) if nf > 0 else float(np.linalg.norm(R))


def solve(g: Graph, Y, penalty: PenaltySpec, cfg: SolverConfig, record_objective: bool = True, init=None):
    """Run ``cfg.warmup + cfg.T`` message-passing steps from F = ``init`` (default Y).

    Returns ``(F, trace)``; F keeps the shape of Y. ``trace.converged`` says
    whether the last relative step ||F_new - F|| / max(1, ||F||) is below
    ``cfg.tol``.
    """
    Y_in = np.asarray(Y, dtype=float)
    if Y_in.shape[0] != g.n_nodes:
        raise ShapeError(f"Y must have {g.n_nodes} rows, got {Y_in.shape}")
    Y2 = _as_2d(Y_in)
    F = Y2.copy() if init is None else _as_2d(init).copy()
    if F.shape != Y2.shape:
        raise ShapeError(f"init {F.shape} and Y {Y2.shape} differ in shape")
    trace = SolverTrace()
    rel = np.inf
    total = cfg.warmup + cfg.T
    for t in range(total):
        F_new = _step(g, F, Y2, penalty, cfg.mu, cfg.grad_floor)
        if not np.all(np.isfinite(F_new)):
            raise DivergenceError(t + 1)
        step = float(np.linalg.norm(F_new - F))
        rel = step / max(1.0, float(np.linalg.norm(F)))
        F = F_new
        trace.delta.append(step)
        trace.phase.append("warmup" if t < cfg.warmup else "main")
        trace.objective.append(objective(g, F, Y2, penalty, cfg.mu) if record_objective else float("nan"))
    trace.converged = bool(rel < cfg.tol)
    return F.reshape(Y_in.shape), trace


def closed_form_p2(g: Graph, Y, mu: float, dense_cap: int = DENSE_CAP) -> np.ndarray:
    """mu (mu I + L)^{-1} Y by a dense solve; the p = 2 minimizer."""
    if g.directed:
        raise ConfigError("closed form needs an undirected graph")
    if g.n_nodes > dense_cap:
        raise ConfigError(f"dense solve limited to {dense_cap} nodes")
    if not mu > 0:
        raise ConfigError("mu must be positive")
    Y = np.asarray(Y, dtype=float)
    A = normalized_laplacian(g).toarray() + mu * np.eye(g.n_nodes)
    try:
        return mu * sla.solve(A, Y, assume_a="sym")
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"singular system: {exc}") from None


def iteration_matrix_p2(g: Graph, mu: float) -> np.ndarray:
    """Dense alpha D^{-1/2} M D^{-1/2} for p = 2 (M = 2W)."""
    dis = g.inv_sqrt_degrees
    W = g.weights.toarray()
    d = g.degrees
    scaled = np.where(d > 0, 2.0, 0.0)
    alpha = 1.0 / (scaled + 2.0 * mu)
    return alpha[:, None] * (dis[:, None] * (2.0 * W) * dis[None, :])
