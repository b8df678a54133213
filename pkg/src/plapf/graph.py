"""Weighted graphs, the normalized Laplacian, homophily and dataset I/O.

Dataset directory layout::

    edges.csv     src,dst[,weight]   (header required, weight defaults to 1.0)
    features.csv  one row of comma-separated reals per node, no header
    labels.csv    node,label         (header required, every node listed once)
    splits.json   {"train": [...], "val": [...], "test": [...]}   (optional)
    meta.json     {"name": ..., "directed": ..., "ratios": [...]}  (optional)

When ``splits.json`` is absent the masks come from :func:`random_split`.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DatasetLoadError, InvalidGraphError, SplitError

log = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.2, 0.1, 0.7)


class Graph:
    """Immutable weighted graph on nodes ``0 .. n_nodes - 1``.

    Undirected graphs store every edge once and expose it symmetrically
    through :attr:`weights`. Directed graphs keep ordered pairs as given.
    """

    def __init__(self, n_nodes, src, dst, weight=None, directed=False):
        n_nodes = int(n_nodes)
        if n_nodes <= 0:
            raise InvalidGraphError("n_nodes must be positive")
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if weight is None:
            weight = np.ones(src.shape[0])
        weight = np.asarray(weight, dtype=float).ravel()
        if not (src.shape == dst.shape == weight.shape):
            raise InvalidGraphError("src, dst and weight must have equal length")
        if src.size:
            if src.min() < 0 or dst.min() < 0 or src.max() >= n_nodes or dst.max() >= n_nodes:
                raise InvalidGraphError(f"node id out of range [0, {n_nodes})")
        if np.any(~np.isfinite(weight)):
            raise InvalidGraphError("edge weights must be finite")
        if np.any(weight < 0):
            raise InvalidGraphError("negative edge weight")

        if directed:
            key = src * n_nodes + dst
        else:
            key = np.minimum(src, dst) * n_nodes + np.maximum(src, dst)
        uniq, counts = np.unique(key, return_counts=True)
        if np.any(counts > 1):
            bad = uniq[counts > 1][0]
            raise InvalidGraphError(
                f"duplicate edge ({bad // n_nodes}, {bad % n_nodes})"
            )

        self.n_nodes = n_nodes
        self.directed = bool(directed)
        self.src, self.dst, self.weight = src, dst, weight
        for a in (self.src, self.dst, self.weight):
            a.setflags(write=False)

    @classmethod
    def from_dense(cls, W, directed=None):
        W = np.asarray(W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise InvalidGraphError("weight matrix must be square")
        if directed is None:
            directed = not np.array_equal(W, W.T)
        if not directed:
            if not np.array_equal(W, W.T):
                raise InvalidGraphError("undirected graph needs a symmetric weight matrix")
            W = np.triu(W)
        i, j = np.nonzero(W)
        return cls(W.shape[0], i, j, W[i, j], directed=directed)

    @property
    def n_edges(self) -> int:
        return int(self.src.shape[0])

    @property
    def edges(self):
        return list(zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()))

    @cached_property
    def weights(self) -> sp.csr_matrix:
        """Weight matrix W as CSR; symmetric iff the graph is undirected."""
        if self.directed:
            rows, cols, vals = self.src, self.dst, self.weight
        else:
            off = self.src != self.dst
            rows = np.concatenate([self.src, self.dst[off]])
            cols = np.concatenate([self.dst, self.src[off]])
            vals = np.concatenate([self.weight, self.weight[off]])
        W = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_nodes, self.n_nodes))
        W.sort_indices()
        return W

    @cached_property
    def degrees(self) -> np.ndarray:
        """Row sums of W (out-degree for directed graphs)."""
        d = np.asarray(self.weights.sum(axis=1)).ravel()
        d.setflags(write=False)
        return d

    @cached_property
    def inv_sqrt_degrees(self) -> np.ndarray:
        # zero-degree nodes get 0 instead of inf
        d = self.degrees
        out = np.zeros_like(d)
        pos = d > 0
        out[pos] = 1.0 / np.sqrt(d[pos])
        out.setflags(write=False)
        return out

    @cached_property
    def arcs(self):
        """(rows, cols, weights) of every stored entry of W, sorted by row."""
        W = self.weights
        rows = np.repeat(np.arange(self.n_nodes), np.diff(W.indptr))
        return rows, W.indices.astype(np.int64), W.data.copy()

    def symmetrized(self) -> "Graph":
        """Undirected graph with w_ij = max(w_ij, w_ji)."""
        if not self.directed:
            return self
        W = self.weights
        S = W.maximum(W.T).tocoo()
        keep = S.row <= S.col
        return Graph(self.n_nodes, S.row[keep], S.col[keep], S.data[keep], directed=False)

    def __repr__(self):
        kind = "directed" if self.directed else "undirected"
        return f"Graph(n_nodes={self.n_nodes}, n_edges={self.n_edges}, {kind})"


def normalized_laplacian(g: Graph) -> sp.csr_matrix:
    """Return L = I - D^{-1/2} W D^{-1/2} as a sparse matrix.

    Isolated nodes get a zero row and column (their D^{-1/2} entry is taken as
    0), so a graph without edges has L = 0.
    """
    dis = sp.diags(g.inv_sqrt_degrees)
    A = dis @ g.weights @ dis
    ident = sp.diags((g.degrees > 0).astype(float))
    return sp.csr_matrix(ident - A)


def homophily(g: Graph, labels) -> float:
    """Mean over nodes with neighbours of the same-label neighbour fraction.

    Neighbourhoods are out-neighbourhoods for directed graphs. Nodes without
    neighbours are left out of the mean; a graph with no edges returns nan.
    """
    labels = np.asarray(labels)
    if labels.shape[0] != g.n_nodes:
        raise ValueError("labels length must equal n_nodes")
    rows, cols, _ = g.arcs
    same = (labels[rows] == labels[cols]).astype(float)
    n_nb = np.bincount(rows, minlength=g.n_nodes)
    n_same = np.bincount(rows, weights=same, minlength=g.n_nodes)
    has = n_nb > 0
    if not has.any():
        return float("nan")
    return float(np.mean(n_same[has] / n_nb[has]))


@dataclass(frozen=True, eq=False)
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.graph.n_nodes
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValueError(f"features must have {n} rows")
        if self.labels.shape != (n,):
            raise ValueError(f"labels must have length {n}")
        masks = (self.train_mask, self.val_mask, self.test_mask)
        for m in masks:
            if m.shape != (n,) or m.dtype != bool:
                raise ValueError("masks must be boolean vectors of length n_nodes")
        overlap = (self.train_mask.astype(int) + self.val_mask + self.test_mask) > 1
        if overlap.any():
            raise ValueError("train/val/test masks overlap")
        if n and self.labels.min() < 0:
            raise ValueError("labels must be non-negative class ids")
        present = np.unique(self.labels)
        if not np.array_equal(present, np.arange(present.size)):
            raise ValueError("labels must cover classes 0..C-1")

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def with_masks(self, train, val, test) -> "Dataset":
        return Dataset(self.graph, self.features, self.labels, train, val, test,
                       self.name, dict(self.meta))

    def with_graph(self, graph: Graph) -> "Dataset":
        return Dataset(graph, self.features, self.labels, self.train_mask,
                       self.val_mask, self.test_mask, self.name, dict(self.meta))

    def summary(self) -> dict:
        return {
            "name": self.name,
            "nodes": self.graph.n_nodes,
            "edges": self.graph.n_edges,
            "directed": self.graph.directed,
            "classes": self.n_classes,
            "features": self.n_features,
            "train": int(self.train_mask.sum()),
            "val": int(self.val_mask.sum()),
            "test": int(self.test_mask.sum()),
        }


def _allocate(counts, total):
    """Split ``total`` across groups proportionally to ``counts``.

    Largest-remainder rounding; ties broken by group order.
    """
    counts = np.asarray(counts, dtype=float)
    share = counts * total / counts.sum() if counts.sum() else np.zeros_like(counts)
    base = np.floor(share).astype(int)
    rest = int(total - base.sum())
    if rest > 0:
        order = np.argsort(-(share - base), kind="stable")
        base[order[:rest]] += 1
    return base


def random_split(ds: Dataset, ratios=DEFAULT_RATIOS, seed: int = 0) -> Dataset:
    """Stratified random train/val/test masks.

    Global train and val sizes are ``round(ratio * n)`` (halves round up),
    test takes the remainder. Each size is spread over classes by largest
    remainder, then nodes are drawn per class with ``default_rng(seed)``.
    Raises :class:`SplitError` if some class ends up without a training node.
    """
    r = np.asarray(ratios, dtype=float)
    if r.shape != (3,) or np.any(r < 0) or not np.isclose(r.sum(), 1.0) or r[0] <= 0:
        raise SplitError(f"ratios must be 3 non-negative numbers summing to 1 with train > 0, got {ratios}")
    n = ds.graph.n_nodes
    n_train = min(n, int(np.floor(r[0] * n + 0.5)))
    n_val = min(n - n_train, int(np.floor(r[1] * n + 0.5)))

    classes = np.arange(ds.n_classes)
    members = [np.flatnonzero(ds.labels == c) for c in classes]
    sizes = np.array([m.size for m in members])
    tr = _allocate(sizes, n_train)
    va = _allocate(sizes - tr, n_val)
    empty = np.flatnonzero(tr == 0)
    if empty.size:
        c = int(empty[0])
        raise SplitError(
            f"class {c} has {sizes[c]} nodes, too few to appear in the training split at ratio {r[0]}"
        )

    rng = np.random.default_rng(seed)
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    for c, idx in zip(classes, members):
        perm = rng.permutation(idx)
        train[perm[: tr[c]]] = True
        val[perm[tr[c]: tr[c] + va[c]]] = True
        test[perm[tr[c] + va[c]:]] = True
    out = ds.with_masks(train, val, test)
    out.meta["ratios"] = [float(x) for x in r]
    out.meta["split_seed"] = int(seed)
    return out


def _open_csv(path: Path):
    if not path.is_file():
        raise DatasetLoadError("missing file", path)
    return path.open("r", encoding="utf-8", newline="")


def _read_edges(path: Path):
    src, dst, wt = [], [], []
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["src", "dst"]:
            raise DatasetLoadError("expected header 'src,dst[,weight]'", path, 1)
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) not in (2, width):
                raise DatasetLoadError(f"expected {width} fields, got {len(row)}", path, lineno)
            try:
                s, d = int(row[0]), int(row[1])
                w = float(row[2]) if len(row) > 2 and row[2].strip() else 1.0
            except ValueError as exc:
                raise DatasetLoadError(f"bad value ({exc})", path, lineno) from None
            src.append(s)
            dst.append(d)
            wt.append(w)
    return src, dst, wt


def _read_features(path: Path):
    rows = []
    width = None
    with _open_csv(path) as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DatasetLoadError(f"ragged row: expected {width} values, got {len(row)}", path, lineno)
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DatasetLoadError(f"bad value ({exc})", path, lineno) from None
    if not rows:
        raise DatasetLoadError("no feature rows", path)
    return np.array(rows, dtype=float)


def _read_labels(path: Path, n: int):
    labels = np.full(n, -1, dtype=np.int64)
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["node", "label"]:
            raise DatasetLoadError("expected header 'node,label'", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DatasetLoadError(f"expected 2 fields, got {len(row)}", path, lineno)
            try:
                node, lab = int(row[0]), int(row[1])
            except ValueError as exc:
                raise DatasetLoadError(f"bad value ({exc})", path, lineno) from None
            if not 0 <= node < n:
                raise DatasetLoadError(f"node id {node} out of range [0, {n})", path, lineno)
            if lab < 0:
                raise DatasetLoadError(f"negative label {lab}", path, lineno)
            if labels[node] >= 0:
                raise DatasetLoadError(f"node {node} labelled twice", path, lineno)
            labels[node] = lab
    missing = np.flatnonzero(labels < 0)
    if missing.size:
        raise DatasetLoadError(f"{missing.size} nodes have no label (first: {missing[0]})", path)
    return labels


def _merge_undirected(src, dst, wt, path):
    # Reciprocal listings (i, j) and (j, i) of the same undirected edge are merged.
    seen = {}
    keep_s, keep_d, keep_w = [], [], []
    for k, (s, d, w) in enumerate(zip(src, dst, wt)):
        key = (min(s, d), max(s, d))
        if key in seen:
            if seen[key] != w:
                raise DatasetLoadError(
                    f"edge {key} listed twice with different weights", path, k + 2
                )
            continue
        seen[key] = w
        keep_s.append(s)
        keep_d.append(d)
        keep_w.append(w)
    return keep_s, keep_d, keep_w


def load_dataset(directory, directed=None, ratios=None, seed: int = 0) -> Dataset:
    """Read a dataset directory (see module docstring).

    ``directed`` and ``ratios`` override ``meta.json``; the defaults are an
    undirected graph and a 20/10/70 split.
    """
    root = Path(directory)
    if not root.is_dir():
        raise DatasetLoadError("not a directory", root)
    meta = {}
    meta_path = root / "meta.json"
    if meta_path.is_file():
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DatasetLoadError(f"invalid JSON ({exc.msg})", meta_path, exc.lineno) from None
    if directed is None:
        directed = bool(meta.get("directed", False))

    features = _read_features(root / "features.csv")
    n = features.shape[0]
    labels = _read_labels(root / "labels.csv", n)

    edges_path = root / "edges.csv"
    src, dst, wt = _read_edges(edges_path)
    for k, (s, d) in enumerate(zip(src, dst)):
        if not (0 <= s < n and 0 <= d < n):
            raise DatasetLoadError(f"edge ({s}, {d}) references a node outside [0, {n})", edges_path, k + 2)
    if not directed:
        src, dst, wt = _merge_undirected(src, dst, wt, edges_path)
    try:
        graph = Graph(n, src, dst, wt, directed=directed)
    except InvalidGraphError as exc:
        raise DatasetLoadError(str(exc), edges_path) from None

    name = str(meta.get("name", root.name))
    splits_path = root / "splits.json"
    empty = np.zeros(n, dtype=bool)
    try:
        ds = Dataset(graph, features, labels, empty, empty.copy(), empty.copy(), name, dict(meta))
    except ValueError as exc:
        raise DatasetLoadError(str(exc), root) from None

    if splits_path.is_file():
        try:
            splits = json.loads(splits_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DatasetLoadError(f"invalid JSON ({exc.msg})", splits_path, exc.lineno) from None
        masks = []
        for key in ("train", "val", "test"):
            ids = np.asarray(splits.get(key, []), dtype=np.int64)
            if ids.size and (ids.min() < 0 or ids.max() >= n):
                raise DatasetLoadError(f"'{key}' contains node ids outside [0, {n})", splits_path)
            m = np.zeros(n, dtype=bool)
            m[ids] = True
            masks.append(m)
        try:
            ds = ds.with_masks(*masks)
        except ValueError as exc:
            raise DatasetLoadError(str(exc), splits_path) from None
        ds.meta.pop("ratios", None)
        ds.meta["fixed_splits"] = True
    else:
        ds = random_split(ds, ratios or meta.get("ratios", DEFAULT_RATIOS), seed)

    s = ds.summary()
    log.info("loaded %s: %d nodes, %d edges, %d classes, %d features",
             s["name"], s["nodes"], s["edges"], s["classes"], s["features"])
    return ds


def save_dataset(ds: Dataset, directory) -> Path:
    """Write ``ds`` in the layout read by :func:`load_dataset` (floats via repr)."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    g = ds.graph
    with (root / "edges.csv").open("w", encoding="utf-8", newline="") as fh:
        fh.write("src,dst,weight\n")
        for s, d, w in zip(g.src.tolist(), g.dst.tolist(), g.weight.tolist()):
            fh.write(f"{s},{d},{w!r}\n")
    with (root / "features.csv").open("w", encoding="utf-8", newline="") as fh:
        for row in ds.features.tolist():
            fh.write(",".join(repr(v) for v in row) + "\n")
    with (root / "labels.csv").open("w", encoding="utf-8", newline="") as fh:
        fh.write("node,label\n")
        for i, lab in enumerate(ds.labels.tolist()):
            fh.write(f"{i},{lab}\n")
    splits = {k: np.flatnonzero(m).tolist() for k, m in
              (("train", ds.train_mask), ("val", ds.val_mask), ("test", ds.test_mask))}
    (root / "splits.json").write_text(json.dumps(splits), encoding="utf-8")
    meta = {"name": ds.name, "directed": g.directed}
    (root / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return root
