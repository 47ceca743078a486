"""Graph container, neutral dataset directory I/O and Weisfeiler-Lehman features.

Dataset directory layout::

    graph.edges    one undirected edge per line, "src<TAB>dst", 0-indexed; '#' comments
    features.tsv   optional; row i = node i, dense reals or sparse "idx:val" tokens
    labels.tsv     row i = integer class of node i, or "-" for unlabeled
    splits.json    {"train": [...], "val": [...], "test": [...]}
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

UNLABELED = -1


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset files."""


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph stored as a symmetric 0/1 CSR matrix.

    Use :meth:`from_edges` to build one; it drops self-loops, removes
    duplicates and symmetrizes.
    """

    adjacency: sp.csr_matrix
    node_ids: tuple | None = None

    @classmethod
    def from_edges(cls, n_nodes: int, edges, node_ids=None) -> "Graph":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
            raise DatasetError(f"edge endpoint out of range for {n_nodes} nodes")
        src, dst = edges[:, 0], edges[:, 1]
        keep = src != dst
        src, dst = src[keep], dst[keep]
        lo, hi = np.minimum(src, dst), np.maximum(src, dst)
        keys = np.unique(lo * n_nodes + hi)
        lo, hi = keys // n_nodes, keys % n_nodes
        rows = np.concatenate([lo, hi])
        cols = np.concatenate([hi, lo])
        data = np.ones(rows.size, dtype=np.float64)
        adj = sp.csr_matrix((data, (rows, cols)), shape=(n_nodes, n_nodes))
        adj.sort_indices()
        return cls(adj, None if node_ids is None else tuple(node_ids))

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz // 2

    @property
    def indptr(self) -> np.ndarray:
        return self.adjacency.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.adjacency.indices

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr).astype(np.int64)

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def edge_list(self) -> np.ndarray:
        """Upper-triangle edges as an (M, 2) array sorted lexicographically."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.stack([coo.row[order], coo.col[order]], axis=1).astype(np.int64)

    def permute(self, perm) -> "Graph":
        """Return the graph with node ``i`` relabeled as ``perm[i]``."""
        perm = np.asarray(perm)
        e = self.edge_list()
        return Graph.from_edges(self.n_nodes, perm[e])


@dataclass(frozen=True)
class FeatureMatrix:
    """Node attributes X (N x D). ``needs_wl`` marks a placeholder with D = 0."""

    values: np.ndarray | sp.csr_matrix
    needs_wl: bool = False

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def dense(self) -> np.ndarray:
        v = self.values
        return v.toarray() if sp.issparse(v) else np.asarray(v)


@dataclass(frozen=True)
class LabelSet:
    labels: np.ndarray  # int64, UNLABELED for missing
    n_classes: int

    def __post_init__(self):
        lab = self.labels
        bad = (lab != UNLABELED) & ((lab < 0) | (lab >= self.n_classes))
        if bad.any():
            raise DatasetError(f"class index out of range at node {int(np.flatnonzero(bad)[0])}")

    def onehot(self) -> np.ndarray:
        y = np.zeros((self.labels.size, self.n_classes))
        known = self.labels != UNLABELED
        y[np.flatnonzero(known), self.labels[known]] = 1.0
        return y


@dataclass(frozen=True)
class SplitSpec:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def validate(self, n_nodes: int) -> None:
        parts = {"train": self.train, "val": self.val, "test": self.test}
        for name, idx in parts.items():
            if idx.size and (idx.min() < 0 or idx.max() >= n_nodes):
                raise DatasetError(f"splits.json: '{name}' index out of range for {n_nodes} nodes")
        seen: dict[int, str] = {}
        for name, idx in parts.items():
            if np.unique(idx).size != idx.size:
                raise DatasetError(f"splits.json: duplicate index in '{name}'")
            for i in idx.tolist():
                if i in seen:
                    raise DatasetError(f"splits.json: node {i} in both '{seen[i]}' and '{name}'")
                seen[i] = name

    def get(self, name: str) -> np.ndarray:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


@dataclass(frozen=True)
class Dataset:
    graph: Graph
    features: FeatureMatrix
    labels: LabelSet
    splits: SplitSpec
    name: str = field(default="")

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(self.graph.edge_list().tobytes())
        h.update(np.int64([self.graph.n_nodes, self.features.d, self.labels.n_classes]).tobytes())
        return h.hexdigest()[:16]


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def _read_labels(path):
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            tok = raw.strip()
            if not tok or tok.startswith("#"):
                continue
            if tok == "-":
                labels.append(UNLABELED)
                continue
            try:
                value = int(tok)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: expected integer class or '-', got {tok!r}") from None
            if value < 0:
                raise DatasetError(f"{path}:{lineno}: negative class index {value}")
            labels.append(value)
    return np.asarray(labels, dtype=np.int64)


def _read_edges(path, n_nodes):
    edges = []
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise DatasetError(f"{path}:{lineno}: expected 'src<TAB>dst', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: non-integer node index in {line!r}") from None
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise DatasetError(f"{path}:{lineno}: node index out of range [0, {n_nodes})")
        edges.append((u, v))
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def _read_features(path, n_nodes):
    # each line is either all "idx:val" tokens or all plain reals
    rows, cols, vals = [], [], []
    dense_rows = {}
    width = 0
    count = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if raw.startswith("#"):
                continue
            i = count
            count += 1
            if i >= n_nodes:
                raise DatasetError(f"{path}:{lineno}: more feature rows than the {n_nodes} labeled nodes")
            toks = line.split()
            try:
                if toks and ":" in toks[0]:
                    for tok in toks:
                        k, v = tok.split(":", 1)
                        k = int(k)
                        if k < 0:
                            raise ValueError
                        rows.append(i)
                        cols.append(k)
                        vals.append(float(v))
                        width = max(width, k + 1)
                elif toks:
                    dense_rows[i] = np.asarray([float(t) for t in toks])
                    width = max(width, len(toks))
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: malformed feature token") from None
    if count != n_nodes:
        raise DatasetError(f"{path}: {count} feature rows for {n_nodes} nodes")
    for i, vec in dense_rows.items():
        nz = np.flatnonzero(vec)
        rows.extend([i] * nz.size)
        cols.extend(nz.tolist())
        vals.extend(vec[nz].tolist())
    x = sp.csr_matrix((vals, (rows, cols)), shape=(n_nodes, width), dtype=np.float64)
    if not np.all(np.isfinite(x.data)):
        raise DatasetError(f"{path}: non-finite feature value")
    x.sum_duplicates()
    x.sort_indices()
    return x


def load_dataset(dir_path) -> Dataset:
    """Load and validate a dataset directory.

    The node count is the number of rows in ``labels.tsv``. Missing
    ``features.tsv`` yields an empty feature matrix with ``needs_wl`` set.
    """
    dir_path = os.fspath(dir_path)
    for name in ("graph.edges", "labels.tsv", "splits.json"):
        if not os.path.isfile(os.path.join(dir_path, name)):
            raise DatasetError(f"missing {name} in {dir_path}")
    labels = _read_labels(os.path.join(dir_path, "labels.tsv"))
    n = labels.size
    n_classes = int(labels.max()) + 1 if (labels != UNLABELED).any() else 0
    edges = _read_edges(os.path.join(dir_path, "graph.edges"), n)
    graph = Graph.from_edges(n, edges)

    feat_path = os.path.join(dir_path, "features.tsv")
    if os.path.isfile(feat_path):
        features = FeatureMatrix(_read_features(feat_path, n))
    else:
        features = FeatureMatrix(sp.csr_matrix((n, 0)), needs_wl=True)

    split_path = os.path.join(dir_path, "splits.json")
    try:
        with open(split_path, encoding="utf-8") as fh:
            raw = json.load(fh)
        splits = SplitSpec(*(np.asarray(raw[k], dtype=np.int64) for k in ("train", "val", "test")))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{split_path}: {exc}") from None
    splits.validate(n)
    return Dataset(graph, features, LabelSet(labels, n_classes), splits, os.path.basename(dir_path.rstrip("/")))


def save_dataset(dir_path, graph: Graph, labels: LabelSet, splits: SplitSpec,
                 features: FeatureMatrix | None = None) -> None:
    """Write a dataset directory in the neutral format (sparse feature rows)."""
    os.makedirs(dir_path, exist_ok=True)
    with open(os.path.join(dir_path, "graph.edges"), "w", encoding="utf-8") as fh:
        for u, v in graph.edge_list():
            fh.write(f"{u}\t{v}\n")
    with open(os.path.join(dir_path, "labels.tsv"), "w", encoding="utf-8") as fh:
        for c in labels.labels:
            fh.write("-\n" if c == UNLABELED else f"{c}\n")
    with open(os.path.join(dir_path, "splits.json"), "w", encoding="utf-8") as fh:
        json.dump({k: splits.get(k).tolist() for k in ("train", "val", "test")}, fh)
    if features is not None and not features.needs_wl:
        x = sp.csr_matrix(features.values)
        with open(os.path.join(dir_path, "features.tsv"), "w", encoding="utf-8") as fh:
            for i in range(x.shape[0]):
                lo, hi = x.indptr[i], x.indptr[i + 1]
                fh.write(" ".join(f"{k}:{float(v)!r}" for k, v in zip(x.indices[lo:hi], x.data[lo:hi])) + "\n")


def save_predictions(path, preds, probs) -> None:
    preds = np.asarray(preds)
    probs = np.asarray(probs)
    if preds.shape[0] != probs.shape[0]:
        raise ValueError("preds and probs disagree on node count")
    header = ["node", "pred"] + [f"p_{c + 1}" for c in range(probs.shape[1])]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for i, (p, row) in enumerate(zip(preds, probs)):
            fh.write(f"{i}\t{int(p)}\t" + "\t".join(f"{v:.6f}" for v in row) + "\n")


def load_predictions(path):
    """Inverse of :func:`save_predictions`; returns ``(preds, probs)``."""
    table = np.loadtxt(path, delimiter="\t", skiprows=1, ndmin=2)
    return table[:, 1].astype(np.int64), table[:, 2:]


def wl_features(graph: Graph, iterations: int = 3, max_colors: int = 1024) -> FeatureMatrix:
    """One-hot Weisfeiler-Lehman colors after ``iterations`` refinement rounds.

    Starts from a single uniform color. Each round a node's new color is the
    pair (own color, sorted multiset of neighbor colors); colors are numbered
    in first-seen node order. Color indices at or beyond ``max_colors`` fold
    onto ``index % max_colors``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    n = graph.n_nodes
    colors = np.zeros(n, dtype=np.int64)
    indptr, indices = graph.indptr, graph.indices
    for _ in range(iterations):
        table: dict = {}
        new = np.empty(n, dtype=np.int64)
        for i in range(n):
            key = (int(colors[i]), tuple(sorted(colors[indices[indptr[i]:indptr[i + 1]]].tolist())))
            new[i] = table.setdefault(key, len(table))
        colors = new
    n_cols = min(int(colors.max()) + 1 if n else 0, max_colors)
    x = sp.csr_matrix((np.ones(n), (np.arange(n), colors % max_colors)), shape=(n, n_cols))
    return FeatureMatrix(x)


def row_normalize(x):
    """Scale each row to unit L1 norm (all-zero rows stay zero)."""
    if sp.issparse(x):
        s = np.asarray(abs(x).sum(axis=1)).ravel()
        s[s == 0] = 1.0
        return sp.diags(1.0 / s) @ x
    s = np.abs(x).sum(axis=1, keepdims=True)
    s[s == 0] = 1.0
    return x / s
