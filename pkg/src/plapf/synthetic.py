"""Small seeded graphs and datasets for tests, verification and demos."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError
from .graph import DEFAULT_RATIOS, Dataset, Graph, normalized_laplacian, random_split


def path_graph(n: int) -> Graph:
    return Graph(n, np.arange(n - 1), np.arange(1, n))


def complete_graph(n: int) -> Graph:
    i, j = np.triu_indices(n, 1)
    return Graph(n, i, j)


def disjoint_cliques(sizes) -> Graph:
    src, dst = [], []
    off = 0
    for s in sizes:
        i, j = np.triu_indices(s, 1)
        src.append(i + off)
        dst.append(j + off)
        off += s
    return Graph(off, np.concatenate(src), np.concatenate(dst))


def random_graph(n: int, p: float, seed=0, weighted=False, connected_min_degree=True) -> Graph:
    """Erdos-Renyi graph; isolated nodes are attached to a random partner."""
    rng = np.random.default_rng(seed)
    A = np.triu(rng.random((n, n)) < p, 1)
    if connected_min_degree:
        for i in range(n):
            if not A[i].any() and not A[:, i].any():
                j = int(rng.integers(n - 1))
                j += j >= i
                A[min(i, j), max(i, j)] = True
    i, j = np.nonzero(A)
    w = rng.uniform(0.5, 2.0, size=i.size) if weighted else None
    return Graph(n, i, j, w)


def random_digraph(n: int, p: float, seed=0) -> Graph:
    rng = np.random.default_rng(seed)
    A = rng.random((n, n)) < p
    np.fill_diagonal(A, False)
    i, j = np.nonzero(A)
    return Graph(n, i, j, directed=True)


def sbm_graph(sizes, p_in, p_out, seed=0):
    """Stochastic block model; returns ``(graph, labels)``."""
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = labels.size
    prob = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    A = np.triu(rng.random((n, n)) < prob, 1)
    i, j = np.nonzero(A)
    return Graph(n, i, j), labels


def knn_graph(points, k: int) -> Graph:
    """Symmetrized k-nearest-neighbour graph with unit weights."""
    P = np.asarray(points, dtype=float)
    n = P.shape[0]
    D = np.sum((P[:, None, :] - P[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(D, np.inf)
    nbr = np.argsort(D, axis=1, kind="stable")[:, :k]
    A = np.zeros((n, n), dtype=bool)
    A[np.repeat(np.arange(n), k), nbr.ravel()] = True
    A = np.triu(A | A.T, 1)
    i, j = np.nonzero(A)
    return Graph(n, i, j)


def smooth_signal(g: Graph, n_features: int = 4, n_modes: int = 3, seed=0):
    """Random combinations of the lowest non-trivial Laplacian eigenvectors.

    Columns are scaled to unit mean square, so Gaussian noise of std sigma has
    per-entry variance sigma**2 relative to a signal of power 1.
    """
    rng = np.random.default_rng(seed)
    _, U = sla.eigh(normalized_laplacian(g).toarray())
    modes = U[:, 1: 1 + n_modes]
    X = modes @ rng.standard_normal((n_modes, n_features))
    X /= np.sqrt(np.mean(X**2, axis=0, keepdims=True))
    return X


def sbm_dataset(n=200, n_classes=2, p_in=0.2, p_out=0.02, n_features=16, feature_noise=2.0,
                ratios=DEFAULT_RATIOS, seed=0) -> Dataset:
    """Homophilic SBM with noisy class-mean features."""
    sizes = [n // n_classes + (c < n % n_classes) for c in range(n_classes)]
    g, labels = sbm_graph(sizes, p_in, p_out, seed)
    rng = np.random.default_rng([seed, 1])
    centers = rng.standard_normal((n_classes, n_features))
    X = centers[labels] + feature_noise * rng.standard_normal((g.n_nodes, n_features))
    empty = np.zeros(g.n_nodes, dtype=bool)
    ds = Dataset(g, X, labels, empty, empty.copy(), empty.copy(), f"sbm{n}")
    return random_split(ds, ratios, seed)


def cliques_dataset(size=5, n_cliques=2) -> Dataset:
    """Disjoint cliques, one class each, first node of each clique labelled."""
    g = disjoint_cliques([size] * n_cliques)
    labels = np.repeat(np.arange(n_cliques), size)
    train = np.zeros(g.n_nodes, dtype=bool)
    train[np.arange(n_cliques) * size] = True
    val = np.zeros(g.n_nodes, dtype=bool)
    X = np.eye(n_cliques)[labels]
    return Dataset(g, X, labels, train, val, ~train, f"cliques{n_cliques}x{size}")


def smooth_dataset(n=200, k=8, n_features=4, n_modes=3, ratios=DEFAULT_RATIOS, seed=0) -> Dataset:
    """kNN graph on random 2-D points carrying a smooth signal.

    Labels split nodes by the sign of the first signal column.
    """
    rng = np.random.default_rng(seed)
    g = knn_graph(rng.random((n, 2)), k)
    X = smooth_signal(g, n_features, n_modes, seed)
    labels = (X[:, 0] > 0).astype(np.int64)
    empty = np.zeros(n, dtype=bool)
    ds = Dataset(g, X, labels, empty, empty.copy(), empty.copy(), f"smooth{n}")
    return random_split(ds, ratios, seed)


def make_synthetic(spec: dict, seed=0) -> Dataset:
    """Build a dataset from a config section like ``{"kind": "sbm", "n": 200}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    makers = {"sbm": sbm_dataset, "cliques": cliques_dataset, "smooth": smooth_dataset}
    if kind not in makers:
        raise ConfigError(f"unknown synthetic dataset kind {kind!r} (choose from {sorted(makers)})")
    if kind != "cliques":
        spec.setdefault("seed", seed)
    if "ratios" in spec:
        spec["ratios"] = tuple(spec["ratios"])
    try:
        return makers[kind](**spec)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic dataset parameters: {exc}") from None
