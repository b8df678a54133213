"""Quasi-framelet scaling functions and Chebyshev approximation on [0, pi].

A bank is a tuple of K + 1 scalar functions g_0..g_K whose squares sum to one
on [0, pi]; g_0 is the low-pass function (1 at 0, 0 at pi) and g_K the
high-pass one.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, FitError, ShapeError

IDENTITY_TOL = 1e-12
CUSTOM_IDENTITY_TOL = 1e-9
FIT_GRID = 1024

PRIMITIVES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "cos_half": lambda x: np.cos(x / 2),
    "sin_half": lambda x: np.sin(x / 2),
    "cos_sq_half": lambda x: np.cos(x / 2) ** 2,
    "sin_sq_half": lambda x: np.sin(x / 2) ** 2,
    "sin_scaled": np.sin,
}


class _Combination:
    """sum_i c_i * primitive_i(x); picklable, unlike a closure."""

    def __init__(self, terms):
        self.terms = tuple((str(name), float(c)) for name, c in terms)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for name, c in self.terms:
            out = out + c * PRIMITIVES[name](x)
        return out

    def __repr__(self):
        return " + ".join(f"{c:g}*{name}" for name, c in self.terms)


@dataclass(frozen=True)
class FilterBank:
    name: str
    g: tuple

    @property
    def K(self) -> int:
        return len(self.g) - 1

    def __call__(self, xi) -> np.ndarray:
        """Evaluate every g_k at ``xi``; result has shape (K + 1, *xi.shape)."""
        xi = np.asarray(xi, dtype=float)
        return np.stack([np.broadcast_to(f(xi), xi.shape) for f in self.g])

    def scaled(self, k: int, factor: float) -> "FilterBank":
        """Copy with g_k multiplied by ``factor`` (used to inject broken banks)."""
        funcs = list(self.g)
        funcs[k] = _Combination([(n, c * factor) for n, c in funcs[k].terms]) \
            if isinstance(funcs[k], _Combination) else _Scaled(funcs[k], factor)
        return FilterBank(f"{self.name}*{factor:g}@{k}", tuple(funcs))


class _Scaled:
    def __init__(self, f, factor):
        self.f, self.factor = f, float(factor)

    def __call__(self, x):
        return self.factor * self.f(x)


_BUILTIN = {
    "haar": [[("cos_half", 1.0)], [("sin_half", 1.0)]],
    "linear": [[("cos_sq_half", 1.0)], [("sin_scaled", 1.0 / np.sqrt(2.0))], [("sin_sq_half", 1.0)]],
}


def verify_identity(bank: FilterBank, grid_size: int = 10_000) -> float:
    """Max over a uniform grid on [0, pi] of |sum_k g_k(xi)^2 - 1|."""
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    xi = np.linspace(0.0, np.pi, grid_size)
    vals = bank(xi)
    return float(np.max(np.abs(np.sum(vals**2, axis=0) - 1.0)))


def check_monotone(bank: FilterBank, grid_size: int = 1001) -> bool:
    """g_0 non-increasing from 1 to 0 and g_K non-decreasing from 0 to 1."""
    xi = np.linspace(0.0, np.pi, grid_size)
    lo, hi = bank.g[0](xi), bank.g[-1](xi)
    tol = 1e-12
    return bool(
        np.all(np.diff(lo) <= tol) and np.all(np.diff(hi) >= -tol)
        and abs(lo[0] - 1) < 1e-9 and abs(lo[-1]) < 1e-9
        and abs(hi[0]) < 1e-9 and abs(hi[-1] - 1) < 1e-9
    )


def _make_bank(name, spec, tol) -> FilterBank:
    bank = FilterBank(name, tuple(_Combination(terms) for terms in spec))
    if bank.K < 1:
        raise ConfigError(f"bank '{name}' needs at least two functions")
    res = verify_identity(bank, 10_000)
    if res >= tol:
        raise ConfigError(f"bank '{name}' violates the identity condition (residual {res:.3g})")
    if not check_monotone(bank):
        raise ConfigError(f"bank '{name}': g_0 must descend 1 -> 0 and g_K ascend 0 -> 1")
    return bank


def builtin_bank(name: str) -> FilterBank:
    """``haar`` (K = 1) or ``linear`` (K = 2)."""
    key = name.lower()
    if key not in _BUILTIN:
        raise ConfigError(f"unknown filter bank '{name}' (choose from {sorted(_BUILTIN)})")
    return _make_bank(key, _BUILTIN[key], IDENTITY_TOL)


def load_bank_json(path, check: bool = True) -> FilterBank:
    """Load a custom bank.

    Format::

        {"name": "my-bank",
         "functions": [[["cos_sq_half", 1.0]],
                       [["sin_scaled", 0.7071067811865476]],
                       [["sin_sq_half", 1.0]]]}

    Each function is a list of ``[primitive, multiplier]`` terms. With
    ``check`` the bank is rejected unless its identity residual is below 1e-9.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read bank file {path}: {exc}") from None
    funcs = doc.get("functions")
    if not isinstance(funcs, list) or len(funcs) < 2:
        raise ConfigError(f"{path}: 'functions' must list at least two functions")
    spec = []
    for k, terms in enumerate(funcs):
        parsed = []
        for term in terms:
            if not (isinstance(term, (list, tuple)) and len(term) == 2 and term[0] in PRIMITIVES):
                raise ConfigError(f"{path}: function {k} has a bad term {term!r}; "
                                  f"primitives are {sorted(PRIMITIVES)}")
            parsed.append((term[0], float(term[1])))
        spec.append(parsed)
    name = str(doc.get("name", path.stem))
    if check:
        return _make_bank(name, spec, CUSTOM_IDENTITY_TOL)
    return FilterBank(name, tuple(_Combination(t) for t in spec))


def resolve_bank(name_or_path: str, check: bool = True) -> FilterBank:
    if name_or_path.lower() in _BUILTIN:
        return builtin_bank(name_or_path)
    return load_bank_json(name_or_path, check=check)


@dataclass(frozen=True)
class ChebyshevApprox:
    """Degree-n Chebyshev expansion on [0, pi] via xi -> 2 xi / pi - 1."""

    coefficients: np.ndarray
    residual: float
    domain: tuple = (0.0, np.pi)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, xi) -> np.ndarray:
        a, b = self.domain
        x = (2.0 * np.asarray(xi, dtype=float) - (a + b)) / (b - a)
        return np.polynomial.chebyshev.chebval(x, self.coefficients)


def chebyshev_fit(f: Callable, n: int) -> ChebyshevApprox:
    """Interpolate ``f`` at the n + 1 Chebyshev points of the first kind.

    The stored residual is the max error over a 1024-point uniform grid.
    """
    n = int(n)
    if n < 0:
        raise ValueError("degree must be >= 0")
    k = np.arange(n + 1)
    theta = np.pi * (k + 0.5) / (n + 1)
    x = np.cos(theta)
    xi = np.pi * (x + 1.0) / 2.0
    fx = np.asarray(f(xi), dtype=float)
    if not np.all(np.isfinite(fx)):
        raise FitError("function returned non-finite values at the Chebyshev nodes")
    # discrete cosine transform of the node values
    c = (2.0 / (n + 1)) * np.cos(np.outer(k, theta)) @ fx
    c[0] /= 2.0
    grid = np.linspace(0.0, np.pi, FIT_GRID)
    fg = np.asarray(f(grid), dtype=float)
    if not np.all(np.isfinite(fg)):
        raise FitError("function returned non-finite values on the residual grid")
    approx = ChebyshevApprox(c, 0.0)
    residual = float(np.max(np.abs(approx(grid) - fg)))
    c.setflags(write=False)
    return ChebyshevApprox(c, residual)


def chebyshev_apply(approx: ChebyshevApprox, A, X) -> np.ndarray:
    """Compute sum_k c_k T_k(A_hat) X by the three-term recurrence.

    ``A`` is anything supporting ``A @ X`` (dense, sparse or LinearOperator)
    with spectrum in the approximation domain; A_hat maps it onto [-1, 1].
    """
    X = np.asarray(X, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[1] != X.shape[0]:
        raise ShapeError(f"operator of shape {A.shape} cannot act on {X.shape}")
    a, b = approx.domain
    scale, shift = 2.0 / (b - a), (a + b) / (b - a)

    def hat(V):
        return scale * (A @ V) - shift * V

    c = approx.coefficients
    out = c[0] * X
    if len(c) == 1:
        return out
    t_prev, t_cur = X, hat(X)
    out = out + c[1] * t_cur
    for ck in c[2:]:
        t_prev, t_cur = t_cur, 2.0 * hat(t_cur) - t_prev
        out = out + ck * t_cur
    return out


def fit_bank(bank: FilterBank, n: int) -> tuple:
    return tuple(chebyshev_fit(f, n) for f in bank.g)

