"""Undecimated quasi-framelet transforms on graphs.

Operators are indexed ``(0, L)``, ``(1, 0) .. (K, 0)``, ``(1, 1) .. (K, 1)``,
..., ``(K, L)``. With scale operators ``L_j = L / s**(m + j)``::

    W[0, L] = g_0(L_L) ... g_0(L_1) g_0(L_0)
    W[k, l] = g_k(L_l) g_0(L_{l-1}) ... g_0(L_0)

Exact mode evaluates these through a dense eigendecomposition; Chebyshev
mode replaces each g by a degree-n polynomial and never forms a matrix.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError, EigenDecompositionError, ShapeError, SystemMismatchError
from .filters import FilterBank, chebyshev_apply, fit_bank
from .graph import Graph, normalized_laplacian

DENSE_CAP = 3000
DEFAULT_DEGREE = 3
DIRECTED_LAMBDA_BOUND = 2.0


def power_iteration(A, tol=1e-6, max_iter=10_000, seed=0):
    """Dominant eigenvalue of a symmetric operator by power iteration.

    Stops when the Rayleigh quotient changes by less than ``tol`` relative.
    Returns ``(eigenvalue, eigenvector)``.
    """
    n = A.shape[0]
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A @ v
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, v
        v = w / nw
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new, v
        lam = lam_new
    return lam, v


def coarsest_scale(lambda_max: float, s: float) -> int:
    """Smallest integer m with s**(-m) * lambda_max <= pi (may be negative)."""
    if s <= 1:
        raise ConfigError(f"dilation must exceed 1, got {s}")
    if lambda_max <= 0:
        return 0
    m = math.ceil(math.log(lambda_max / math.pi) / math.log(s))
    while s ** (-(m - 1)) * lambda_max <= math.pi:
        m -= 1
    while s ** (-m) * lambda_max > math.pi:
        m += 1
    return m


def block_indices(K: int, L: int):
    idx = [(0, L)]
    for ell in range(L + 1):
        idx.extend((k, ell) for k in range(1, K + 1))
    return tuple(idx)


class FrameletSystem:
    """Transform operators for one graph, bank, level and dilation.

    Build with :func:`build_system`; instances are not meant to be mutated.
    """

    def __init__(self, graph, bank, level, dilation, m, lambda_max, mode, degree,
                 laplacian, eigvals=None, eigvecs=None, fits=None):
        self.graph = graph
        self.bank = bank
        self.level = level
        self.dilation = dilation
        self.m = m
        self.lambda_max = lambda_max
        self.mode = mode
        self.degree = degree
        self.laplacian = laplacian
        self.indices = block_indices(bank.K, level)
        self._eigvals = eigvals
        self._eigvecs = eigvecs
        self._fits = fits
        self._scaled = [laplacian * dilation ** (-(m + j)) for j in range(level + 1)]
        self._scaled_t = [Lj.T.tocsr() for Lj in self._scaled]
        self._multipliers = self._spectral_multipliers() if mode == "exact" else None

    @property
    def n_blocks(self) -> int:
        return len(self.indices)

    @property
    def n_nodes(self) -> int:
        return self.graph.n_nodes

    def describe(self) -> dict:
        return {
            "bank": self.bank.name,
            "K": self.bank.K,
            "L": self.level,
            "s": self.dilation,
            "m": self.m,
            "lambda_max": self.lambda_max,
            "mode": self.mode,
            "n": self.degree,
            "blocks": [list(b) for b in self.indices],
        }

    def _spectral_multipliers(self):
        lam = self._eigvals
        s, m = self.dilation, self.m
        g = self.bank.g
        low = [np.ones_like(lam)]
        for j in range(self.level + 1):
            low.append(low[-1] * g[0](lam / s ** (m + j)))
        mult = []
        for k, ell in self.indices:
            if k == 0:
                mult.append(low[self.level + 1])
            else:
                mult.append(g[k](lam / s ** (m + ell)) * low[ell])
        return np.array(mult)

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim not in (1, 2) or X.shape[0] != self.n_nodes:
            raise ShapeError(f"signal must have {self.n_nodes} rows, got shape {X.shape}")
        return X

    def _cheb(self, k, j, X, transpose=False):
        ops = self._scaled_t if transpose else self._scaled
        return chebyshev_apply(self._fits[k], ops[j], X)

    def _factors(self, b):
        k, ell = self.indices[b]
        if k == 0:
            return [(0, j) for j in range(self.level + 1)]
        return [(0, j) for j in range(ell)] + [(k, ell)]

    def apply_block(self, b: int, X) -> np.ndarray:
        """W_b X."""
        X = self._check(X)
        if self.mode == "exact":
            U = self._eigvecs
            G = self._multipliers[b]
            return U @ (G.reshape(-1, *([1] * (X.ndim - 1))) * (U.T @ X))
        out = X
        for k, j in self._factors(b):
            out = self._cheb(k, j, out)
        return out

    def apply_block_transpose(self, b: int, C) -> np.ndarray:
        """W_b^T C."""
        C = self._check(C)
        if self.mode == "exact":
            return self.apply_block(b, C)
        out = C
        for k, j in reversed(self._factors(b)):
            out = self._cheb(k, j, out, transpose=True)
        return out

    def operator_matrix(self, b: int) -> np.ndarray:
        """Dense matrix of W_b (for verification on small graphs)."""
        return self.apply_block(b, np.eye(self.n_nodes))

    def tight_frame_error(self) -> float:
        """||W^T W - I||_F of the stacked dense operators."""
        W = np.vstack([self.operator_matrix(b) for b in range(self.n_blocks)])
        return float(np.linalg.norm(W.T @ W - np.eye(self.n_nodes)))


@dataclass(frozen=True, eq=False)
class FrameletCoefficients:
    blocks: tuple
    system: FrameletSystem

    def __post_init__(self):
        if len(self.blocks) != self.system.n_blocks:
            raise ShapeError(f"expected {self.system.n_blocks} blocks, got {len(self.blocks)}")
        shape = self.blocks[0].shape
        if shape[0] != self.system.n_nodes or any(b.shape != shape for b in self.blocks):
            raise ShapeError("all blocks must be n_nodes x n_features")

    def energy(self) -> float:
        return float(sum(np.sum(b**2) for b in self.blocks))


def build_system(g: Graph, bank: FilterBank, L: int = 1, s: float = 2.0, mode: str = "chebyshev",
                 n: int = DEFAULT_DEGREE, dense_cap: int = DENSE_CAP) -> FrameletSystem:
    """Construct the framelet operators of ``g``.

    ``mode`` is ``"exact"`` (dense eigendecomposition, undirected graphs with
    at most ``dense_cap`` nodes) or ``"chebyshev"`` (degree ``n`` fits of each
    scaling function, composed factor by factor).

    lambda_max comes from power iteration for undirected graphs and is the
    bound 2 for directed ones; m is the smallest integer with
    s**(-m) * lambda_max <= pi.
    """
    if s <= 1:
        raise ConfigError(f"dilation s must exceed 1, got {s}")
    if L < 0:
        raise ConfigError(f"level L must be >= 0, got {L}")
    lap = normalized_laplacian(g)
    if mode == "exact":
        if g.directed:
            raise ConfigError("exact mode needs an undirected graph")
        if g.n_nodes > dense_cap:
            raise ConfigError(f"exact mode limited to {dense_cap} nodes, graph has {g.n_nodes}")
        try:
            eigvals, eigvecs = sla.eigh(lap.toarray())
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise EigenDecompositionError(str(exc)) from None
        eigvals = np.clip(eigvals, 0.0, None)
    elif mode == "chebyshev":
        if n < 0:
            raise ConfigError(f"Chebyshev degree must be >= 0, got {n}")
        eigvals = eigvecs = None
    else:
        raise ConfigError(f"unknown framelet mode '{mode}'")

    if g.directed:
        lam = DIRECTED_LAMBDA_BOUND
    else:
        lam = power_iteration(lap)[0] if g.n_edges else 0.0
    m = coarsest_scale(lam, s)
    fits = fit_bank(bank, n) if mode == "chebyshev" else None
    return FrameletSystem(g, bank, int(L), float(s), m, float(lam), mode,
                          int(n) if mode == "chebyshev" else None, lap,
                          eigvals, eigvecs, fits)


def decompose(sys: FrameletSystem, X) -> FrameletCoefficients:
    X = sys._check(X)
    if sys.mode == "exact":
        return FrameletCoefficients(tuple(sys.apply_block(b, X) for b in range(sys.n_blocks)), sys)
    K, L = sys.bank.K, sys.level
    out = {}
    prefix = X
    for ell in range(L + 1):
        for k in range(1, K + 1):
            out[(k, ell)] = sys._cheb(k, ell, prefix)
        prefix = sys._cheb(0, ell, prefix)
    out[(0, L)] = prefix
    return FrameletCoefficients(tuple(out[idx] for idx in sys.indices), sys)


def reconstruct(sys: FrameletSystem, coeffs: FrameletCoefficients) -> np.ndarray:
    if coeffs.system is not sys:
        raise SystemMismatchError("coefficients were produced by a different framelet system")
    if sys.mode == "exact":
        U = sys._eigvecs
        acc = np.zeros_like(U.T @ coeffs.blocks[0])
        for b, C in enumerate(coeffs.blocks):
            G = sys._multipliers[b]
            acc += G.reshape(-1, *([1] * (C.ndim - 1))) * (U.T @ C)
        return U @ acc
    K, L = sys.bank.K, sys.level
    pos = {idx: b for b, idx in enumerate(sys.indices)}
    blocks = coeffs.blocks
    acc = sys._cheb(0, L, blocks[pos[(0, L)]], transpose=True)
    for k in range(1, K + 1):
        acc = acc + sys._cheb(k, L, blocks[pos[(k, L)]], transpose=True)
    for ell in range(L - 1, -1, -1):
        acc = sys._cheb(0, ell, acc, transpose=True)
        for k in range(1, K + 1):
            acc = acc + sys._cheb(k, ell, blocks[pos[(k, ell)]], transpose=True)
    return acc


def _theta_blocks(sys, theta):
    if len(theta) != sys.n_blocks:
        raise ShapeError(f"theta has {len(theta)} blocks, system has {sys.n_blocks}")
    out = []
    for t in theta:
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            t = np.full(sys.n_nodes, float(t))
        if t.shape != (sys.n_nodes,):
            raise ShapeError(f"each theta block must be a vector of length {sys.n_nodes}")
        out.append(t)
    return out


def scale_rows(theta_b, C):
    return theta_b.reshape(-1, *([1] * (C.ndim - 1))) * C


def framelet_conv(sys: FrameletSystem, theta, X) -> np.ndarray:
    """W^T diag(theta) W X; scalars in ``theta`` broadcast over nodes."""
    theta = _theta_blocks(sys, theta)
    coeffs = decompose(sys, X)
    scaled = tuple(scale_rows(t, C) for t, C in zip(theta, coeffs.blocks))
    return reconstruct(sys, FrameletCoefficients(scaled, sys))


def roundtrip_error(sys: FrameletSystem, X) -> float:
    X = sys._check(X)
    R = reconstruct(sys, decompose(sys, X))
    return float(np.linalg.norm(R - X) / np.linalg.norm(X))


def save_coefficients(coeffs: FrameletCoefficients, directory) -> Path:
    """One CSV per block plus ``manifest.json`` describing the system."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    files = []
    for b, C in enumerate(coeffs.blocks):
        name = f"block_{b:03d}.csv"
        C2 = C.reshape(C.shape[0], -1)
        with (root / name).open("w", encoding="utf-8", newline="") as fh:
            for row in C2.tolist():
                fh.write(",".join(repr(v) for v in row) + "\n")
        files.append(name)
    manifest = coeffs.system.describe()
    manifest["files"] = files
    manifest["ndim"] = int(coeffs.blocks[0].ndim)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return root


def load_coefficients(directory, sys: FrameletSystem) -> FrameletCoefficients:
    root = Path(directory)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    expect = sys.describe()
    for key in ("bank", "K", "L", "s", "m", "mode", "n", "blocks"):
        if manifest.get(key) != expect[key]:
            raise SystemMismatchError(f"manifest field '{key}' is {manifest.get(key)!r}, "
                                      f"system has {expect[key]!r}")
    blocks = []
    for name in manifest["files"]:
        C = np.loadtxt(root / name, delimiter=",", ndmin=2)
        if manifest["ndim"] == 1:
            C = C.ravel()
        blocks.append(C)
    return FrameletCoefficients(tuple(blocks), sys)
