"""Motif instance counting and weighted motif-induced adjacencies.

Motifs are counted as non-induced connected subgraphs (edge subsets of the
graph isomorphic to the template), one count per copy regardless of template
automorphisms. A copy "contains" edge (i, j) when both endpoints are in its
node set, even if the copy itself does not use that edge.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import Graph


class MotifKind(enum.Enum):
    EDGE = "edge"
    TWO_STAR = "2star"
    TRIANGLE = "triangle"
    THREE_STAR = "3star"
    FOUR_PATH = "4path"
    FOUR_CYCLE = "4cycle"
    FOUR_CLIQUE = "4clique"

    @property
    def n_nodes(self) -> int:
        return len({v for e in self.template for v in e})

    @property
    def template(self) -> tuple:
        return _TEMPLATES[self]

    @classmethod
    def parse(cls, name: str) -> "MotifKind":
        key = name.strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "edge": cls.EDGE, "2star": cls.TWO_STAR, "twostar": cls.TWO_STAR, "wedge": cls.TWO_STAR,
            "triangle": cls.TRIANGLE, "3star": cls.THREE_STAR, "threestar": cls.THREE_STAR,
            "4path": cls.FOUR_PATH, "fourpath": cls.FOUR_PATH, "4pathedge": cls.FOUR_PATH,
            "4cycle": cls.FOUR_CYCLE, "fourcycle": cls.FOUR_CYCLE,
            "4clique": cls.FOUR_CLIQUE, "fourclique": cls.FOUR_CLIQUE,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown motif {name!r}") from None


_TEMPLATES = {
    MotifKind.EDGE: ((0, 1),),
    MotifKind.TWO_STAR: ((0, 1), (0, 2)),
    MotifKind.TRIANGLE: ((0, 1), (1, 2), (0, 2)),
    MotifKind.THREE_STAR: ((0, 1), (0, 2), (0, 3)),
    MotifKind.FOUR_PATH: ((0, 1), (1, 2), (2, 3)),
    MotifKind.FOUR_CYCLE: ((0, 1), (1, 2), (2, 3), (0, 3)),
    MotifKind.FOUR_CLIQUE: ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)),
}

ALL_MOTIFS = tuple(MotifKind)


@dataclass(frozen=True)
class MotifAdjacency:
    kind: MotifKind
    matrix: sp.csr_matrix  # float64 storage of integer counts

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class MotifCountMatrix:
    counts: np.ndarray  # (N, C)
    motif_kinds: tuple


# ---------------------------------------------------------------- helpers

def _row_pairs(indptr):
    """Positions (p, q), p < q, of all pairs of entries sharing a CSR row."""
    sizes = np.diff(indptr)
    nnz = int(indptr[-1])
    row_of = np.repeat(np.arange(sizes.size), sizes)
    offs = np.arange(nnz) - indptr[row_of]
    cnt = sizes[row_of] - offs - 1
    p = np.repeat(np.arange(nnz), cnt)
    start = np.cumsum(cnt) - cnt
    q = p + 1 + (np.arange(p.size) - np.repeat(start, cnt))
    return p, q


def _expand(starts, sizes):
    """Flat positions ``starts[r] + 0..sizes[r]-1`` and their owner index r."""
    owner = np.repeat(np.arange(sizes.size), sizes)
    excl = np.cumsum(sizes) - sizes
    pos = starts[owner] + (np.arange(owner.size) - excl[owner])
    return owner, pos


class _EdgeIndex:
    def __init__(self, g: Graph):
        self.n = g.n_nodes
        self.edges = g.edge_list()
        self.keys = self.edges[:, 0] * self.n + self.edges[:, 1]

    def lookup(self, u, v):
        """Edge id of each (u, v) pair, or -1 when not an edge."""
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        k = lo * self.n + hi
        pos = np.searchsorted(self.keys, k)
        pos = np.minimum(pos, max(self.keys.size - 1, 0))
        ok = (self.keys.size > 0) & (lo != hi)
        if self.keys.size:
            ok = ok & (self.keys[pos] == k)
        return np.where(ok, pos, -1)

    def has(self, u, v):
        return self.lookup(u, v) >= 0

    def to_matrix(self, counts):
        counts = np.asarray(counts, dtype=np.float64)
        keep = counts != 0
        e = self.edges[keep]
        c = counts[keep]
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        m = sp.csr_matrix((np.concatenate([c, c]), (rows, cols)), shape=(self.n, self.n))
        m.sort_indices()
        return m


def _credit_pairs(index: _EdgeIndex, copies):
    """Per-edge count of copies whose node set contains the edge."""
    counts = np.zeros(index.edges.shape[0], dtype=np.int64)
    m = copies.shape[1]
    for p, q in itertools.combinations(range(m), 2):
        eid = index.lookup(copies[:, p], copies[:, q])
        eid = eid[eid >= 0]
        counts += np.bincount(eid, minlength=counts.size)
    return counts


def _upper(g: Graph):
    u = sp.triu(g.adjacency, k=1).tocsr()
    u.sort_indices()
    return u


# ---------------------------------------------------------- enumerators

def enumerate_triangles(g: Graph) -> np.ndarray:
    """All triangles as rows (i, j, k) with i < j < k."""
    u = _upper(g)
    p, q = _row_pairs(u.indptr)
    rows = np.repeat(np.arange(g.n_nodes), np.diff(u.indptr))
    i, j, k = rows[p], u.indices[p], u.indices[q]
    keep = _EdgeIndex(g).has(j, k)
    return np.stack([i[keep], j[keep], k[keep]], axis=1).astype(np.int64)


def enumerate_four_cliques(g: Graph) -> np.ndarray:
    tri = enumerate_triangles(g)
    if tri.size == 0:
        return np.zeros((0, 4), dtype=np.int64)
    u = _upper(g)
    k = tri[:, 2]
    owner, pos = _expand(u.indptr[k], np.diff(u.indptr)[k])
    l = u.indices[pos]
    t = tri[owner]
    index = _EdgeIndex(g)
    keep = index.has(t[:, 0], l) & index.has(t[:, 1], l)
    return np.column_stack([t[keep], l[keep]]).astype(np.int64)


def enumerate_four_cycles(g: Graph) -> np.ndarray:
    """4-cycles as rows (a, b, c, d) along the cycle, a = smallest node."""
    a_ = g.adjacency
    p, q = _row_pairs(a_.indptr)
    centers = np.repeat(np.arange(g.n_nodes), np.diff(a_.indptr))[p]
    x, y = a_.indices[p], a_.indices[q]  # x < y, both adjacent to center
    keep = centers > x
    centers, x, y = centers[keep], x[keep], y[keep]
    key = x * g.n_nodes + y
    order = np.lexsort((centers, key))
    key, centers = key[order], centers[order]
    if key.size == 0:
        return np.zeros((0, 4), dtype=np.int64)
    bounds = np.flatnonzero(np.diff(key)) + 1
    indptr = np.concatenate([[0], bounds, [key.size]])
    p2, q2 = _row_pairs(indptr)
    a = key[p2] // g.n_nodes
    c = key[p2] % g.n_nodes
    return np.stack([a, centers[p2], c, centers[q2]], axis=1).astype(np.int64)


def enumerate_four_paths(g: Graph) -> np.ndarray:
    """4-paths as rows (a, b, c, d); each undirected path appears once."""
    a_ = g.adjacency
    e = g.edge_list()
    if e.size == 0:
        return np.zeros((0, 4), dtype=np.int64)
    deg = g.degrees()
    b, c = e[:, 0], e[:, 1]
    tot = deg[b] * deg[c]
    owner = np.repeat(np.arange(e.shape[0]), tot)
    r = np.arange(owner.size) - np.repeat(np.cumsum(tot) - tot, tot)
    dc = deg[c][owner]
    end_a = a_.indices[a_.indptr[b][owner] + r // dc]
    end_d = a_.indices[a_.indptr[c][owner] + r % dc]
    bb, cc = b[owner], c[owner]
    keep = (end_a != cc) & (end_d != bb) & (end_a != end_d)
    return np.stack([end_a[keep], bb[keep], cc[keep], end_d[keep]], axis=1).astype(np.int64)


def _comb2(x):
    return x * (x - 1) // 2


def _comb3(x):
    return x * (x - 1) * (x - 2) // 6


def _common_neighbor_weighted(g: Graph, index: _EdgeIndex, weights):
    """Per-edge sum of ``weights[c]`` over common neighbors c of the endpoints."""
    e = index.edges
    if e.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    a = g.adjacency
    w = a @ sp.diags(np.asarray(weights, dtype=np.float64)) @ a
    vals = np.asarray(w[e[:, 0], e[:, 1]]).ravel()
    return np.rint(vals).astype(np.int64)


# ------------------------------------------------------------ public API

def motif_edge_counts(g: Graph, kind: MotifKind) -> np.ndarray:
    """Per-edge counts, aligned with ``g.edge_list()``."""
    index = _EdgeIndex(g)
    deg = g.degrees()
    e = index.edges
    if kind is MotifKind.EDGE:
        return np.ones(e.shape[0], dtype=np.int64)
    if kind is MotifKind.TRIANGLE:
        return _common_neighbor_weighted(g, index, np.ones(g.n_nodes))
    if kind is MotifKind.TWO_STAR:
        t = _common_neighbor_weighted(g, index, np.ones(g.n_nodes))
        return (deg[e[:, 0]] - 1) + (deg[e[:, 1]] - 1) + t
    if kind is MotifKind.THREE_STAR:
        leaf_pair = _common_neighbor_weighted(g, index, deg - 2)
        return _comb2(deg[e[:, 0]] - 1) + _comb2(deg[e[:, 1]] - 1) + leaf_pair
    return _credit_pairs(index, enumerate_motifs(g, kind))


def enumerate_motifs(g: Graph, kind: MotifKind) -> np.ndarray:
    """Node tuples of every copy of a 3- or 4-node motif."""
    if kind is MotifKind.TRIANGLE:
        return enumerate_triangles(g)
    if kind is MotifKind.FOUR_CLIQUE:
        return enumerate_four_cliques(g)
    if kind is MotifKind.FOUR_CYCLE:
        return enumerate_four_cycles(g)
    if kind is MotifKind.FOUR_PATH:
        return enumerate_four_paths(g)
    raise ValueError(f"no enumerator for {kind.value}; it has a closed form")


def motif_adjacency(g: Graph, kind: MotifKind) -> MotifAdjacency:
    """Weighted motif-induced adjacency: per-edge number of copies containing it."""
    counts = motif_edge_counts(g, kind)
    return MotifAdjacency(kind, _EdgeIndex(g).to_matrix(counts))


def node_motif_counts(g: Graph, kinds) -> MotifCountMatrix:
    """Number of copies of each motif that every node belongs to."""
    kinds = tuple(kinds)
    if not kinds:
        raise ValueError("kinds must be nonempty")
    deg = g.degrees()
    a = g.adjacency
    cols = []
    for kind in kinds:
        if kind is MotifKind.EDGE:
            col = deg
        elif kind is MotifKind.TWO_STAR:
            col = _comb2(deg) + np.rint(a @ (deg - 1.0)).astype(np.int64)
        elif kind is MotifKind.THREE_STAR:
            col = _comb3(deg) + np.rint(a @ _comb2(deg - 1).astype(np.float64)).astype(np.int64)
        else:
            copies = enumerate_motifs(g, kind)
            col = np.bincount(copies.ravel(), minlength=g.n_nodes)
        cols.append(np.asarray(col, dtype=np.int64))
    return MotifCountMatrix(np.stack(cols, axis=1).astype(np.float64), kinds)


# ----------------------------------------------------------------- oracle

BRUTE_FORCE_LIMIT = 40


def _copies_per_mask(kind: MotifKind):
    """For an m-subset, map its induced-edge bitmask to the number of template copies."""
    m = kind.n_nodes
    pairs = list(itertools.combinations(range(m), 2))
    bit = {pq: 1 << b for b, pq in enumerate(pairs)}
    images = set()
    for perm in itertools.permutations(range(m)):
        img = 0
        for u, v in kind.template:
            x, y = sorted((perm[u], perm[v]))
            img |= bit[(x, y)]
        images.add(img)
    table = np.zeros(1 << len(pairs), dtype=np.int64)
    for mask in range(table.size):
        table[mask] = sum(1 for img in images if img & mask == img)
    return pairs, table


def brute_force_motif_oracle(g: Graph, kind: MotifKind) -> MotifAdjacency:
    """Exhaustive-subset reference for :func:`motif_adjacency` (tests only)."""
    n = g.n_nodes
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute-force oracle limited to {BRUTE_FORCE_LIMIT} nodes, got {n}")
    dense = g.adjacency.toarray() > 0
    m = kind.n_nodes
    subsets = np.array(list(itertools.combinations(range(n), m)), dtype=np.int64).reshape(-1, m)
    pairs, table = _copies_per_mask(kind)
    mask = np.zeros(subsets.shape[0], dtype=np.int64)
    for b, (p, q) in enumerate(pairs):
        mask |= dense[subsets[:, p], subsets[:, q]].astype(np.int64) << b
    per_subset = table[mask]
    out = np.zeros((n, n), dtype=np.int64)
    for b, (p, q) in enumerate(pairs):
        hit = ((mask >> b) & 1).astype(bool) & (per_subset > 0)
        np.add.at(out, (subsets[hit, p], subsets[hit, q]), per_subset[hit])
    out = out + out.T
    return MotifAdjacency(kind, sp.csr_matrix(out.astype(np.float64)))


def brute_force_node_counts(g: Graph, kind: MotifKind) -> np.ndarray:
    n = g.n_nodes
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute-force oracle limited to {BRUTE_FORCE_LIMIT} nodes, got {n}")
    dense = g.adjacency.toarray() > 0
    m = kind.n_nodes
    subsets = np.array(list(itertools.combinations(range(n), m)), dtype=np.int64).reshape(-1, m)
    pairs, table = _copies_per_mask(kind)
    mask = np.zeros(subsets.shape[0], dtype=np.int64)
    for b, (p, q) in enumerate(pairs):
        mask |= dense[subsets[:, p], subsets[:, q]].astype(np.int64) << b
    per_subset = table[mask]
    out = np.zeros(n, dtype=np.int64)
    for col in range(m):
        np.add.at(out, subsets[:, col], per_subset)
    return out
