"""Motif matrix functions (self-loop/normalization transforms) and k-step powers."""

from __future__ import annotations

import enum
import os
import threading
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import Graph
from .motifs import MotifAdjacency, MotifKind

DROP_TOL = 1e-12
DEFAULT_DENSITY_FRACTION = 0.25
MIN_DENSITY_BUDGET = 1 << 16


class PsiKind(enum.Enum):
    UNWEIGHTED = "unweighted"  # binarize, unit self-loops
    WEIGHTED = "weighted"  # A + M
    TRANSITION = "transition"  # D^-1 (A + M)
    LAPLACIAN = "laplacian"  # D + A, D = degree of A
    SYMNORM = "symnorm"  # D^-1/2 (A + M) D^-1/2

    @classmethod
    def parse(cls, name: str) -> "PsiKind":
        key = name.strip().lower()
        aliases = {
            "1": cls.UNWEIGHTED, "eq4": cls.UNWEIGHTED,
            "2": cls.WEIGHTED, "eq5": cls.WEIGHTED, "rowmax": cls.WEIGHTED,
            "3": cls.TRANSITION, "eq6": cls.TRANSITION, "randomwalk": cls.TRANSITION,
            "4": cls.LAPLACIAN, "eq7": cls.LAPLACIAN, "abslaplacian": cls.LAPLACIAN,
            "5": cls.SYMNORM, "eq8": cls.SYMNORM, "symmetric": cls.SYMNORM,
        }
        for member in cls:
            aliases[member.value] = member
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown motif matrix function {name!r}") from None


class DensityBudgetExceeded(RuntimeError):
    """A matrix power filled in beyond the configured nonzero budget."""


@dataclass(frozen=True)
class MotifMatrix:
    matrix: sp.csr_matrix
    kind: MotifKind | None
    k: int
    psi: PsiKind | None  # None for the GCN normalization


def _as_csr(a) -> sp.csr_matrix:
    if isinstance(a, MotifAdjacency):
        a = a.matrix
    m = sp.csr_matrix(a, dtype=np.float64, copy=True)
    m.sum_duplicates()
    return m


def _check_input(m: sp.csr_matrix) -> None:
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix must be square, got {m.shape}")
    if m.nnz and m.data.min() < 0:
        raise ValueError("motif adjacency has a negative entry")
    diff = abs(m - m.T)
    if diff.nnz and diff.max() > 1e-9 * max(1.0, abs(m).max()):
        raise ValueError("motif adjacency is not symmetric")


def _row_max_loops(a: sp.csr_matrix) -> np.ndarray:
    # isolated rows get a unit self-loop
    m = a.max(axis=1).toarray().ravel()
    m[m <= 0] = 1.0
    return m


def apply_psi(a, psi: PsiKind, kind: MotifKind | None = None, k: int = 1) -> MotifMatrix:
    """Apply one motif matrix function to a symmetric nonnegative matrix.

    ``M`` is the diagonal of row-wise maxima (1 for all-zero rows). The
    degree matrix ``D`` is that of ``A + M`` for the transition and
    symmetric-normalized variants and that of ``A`` for the absolute
    Laplacian, where isolated nodes also get a unit diagonal.
    """
    if isinstance(a, MotifAdjacency):
        kind = a.kind if kind is None else kind
    m = _as_csr(a)
    _check_input(m)
    m.eliminate_zeros()
    n = m.shape[0]

    if psi is PsiKind.UNWEIGHTED:
        b = m.copy()
        b.setdiag(0)
        b.eliminate_zeros()
        b.data[:] = 1.0
        out = b + sp.identity(n, format="csr")
    elif psi is PsiKind.WEIGHTED:
        out = m + sp.diags(_row_max_loops(m))
    elif psi is PsiKind.TRANSITION:
        am = m + sp.diags(_row_max_loops(m))
        d = np.asarray(am.sum(axis=1)).ravel()
        out = sp.diags(1.0 / d) @ am
    elif psi is PsiKind.LAPLACIAN:
        d = np.asarray(m.sum(axis=1)).ravel()
        d[d <= 0] = 1.0
        out = m + sp.diags(d)
    elif psi is PsiKind.SYMNORM:
        am = m + sp.diags(_row_max_loops(m))
        d = np.asarray(am.sum(axis=1)).ravel()
        s = sp.diags(1.0 / np.sqrt(d))
        out = s @ am @ s
    else:
        raise ValueError(f"unsupported psi {psi!r}")
    out = sp.csr_matrix(out)
    out.sort_indices()
    return MotifMatrix(out, kind, k, psi)


def density_budget(n: int) -> int:
    env = os.environ.get("MCN_DENSITY_BUDGET")
    if env:
        value = float(env)
        # values <= 1 are a fraction of N^2, larger ones an absolute nnz count
        return int(value * n * n) if value <= 1 else int(value)
    # small graphs never pose a fill-in hazard
    return max(int(DEFAULT_DENSITY_FRACTION * n * n), MIN_DENSITY_BUDGET)


def sparse_power(a, k: int, budget: int | None = None, label: str = "matrix") -> sp.csr_matrix:
    """``A^k`` by repeated sparse products, dropping entries below 1e-12."""
    if k < 1:
        raise ValueError("k must be >= 1")
    base = _as_csr(a)
    n = base.shape[0]
    if budget is None:
        budget = density_budget(n)
    out = base.copy()
    for step in range(2, k + 1):
        out = out @ base
        out.data[np.abs(out.data) < DROP_TOL] = 0.0
        out.eliminate_zeros()
        if out.nnz > budget:
            raise DensityBudgetExceeded(
                f"{label}: power {step} of {k} has {out.nnz} nonzeros, budget is {budget} "
                "(set MCN_DENSITY_BUDGET to raise it)")
    out = sp.csr_matrix(out)
    out.sort_indices()
    return out


def k_step_matrix(a: MotifAdjacency, k: int, psi: PsiKind, budget: int | None = None) -> MotifMatrix:
    """Psi applied to the k-th power of the motif adjacency (power first)."""
    label = f"motif={a.kind.value if a.kind else '?'} k={k}"
    power = sparse_power(a.matrix, k, budget=budget, label=label)
    if k > 1:
        # A^k of a symmetric A is symmetric; remove the rounding asymmetry of the products
        power = sp.csr_matrix((power + power.T) * 0.5)
    # A^k for k > 1 carries closed-walk counts on its diagonal; Psi sees them as-is
    return apply_psi(MotifAdjacency(a.kind, power), psi, k=k)


def degenerate_gcn_matrix(g: Graph) -> MotifMatrix:
    """Symmetric-normalized adjacency with unit self-loops, D~^-1/2 (A + I) D~^-1/2."""
    n = g.n_nodes
    a = sp.csr_matrix(g.adjacency, dtype=np.float64) + sp.identity(n, format="csr")
    d = np.asarray(a.sum(axis=1)).ravel()
    s = sp.diags(1.0 / np.sqrt(d))
    out = sp.csr_matrix(s @ a @ s)
    out.sort_indices()
    return MotifMatrix(out, MotifKind.EDGE, 1, None)


class MotifBank:
    """Cache of k-step motif matrices keyed by (motif, k, psi).

    ``matrices[t][k-1]`` follows the order of ``motifs``.
    """

    def __init__(self, graph: Graph, motifs, k_max: int, psi: PsiKind, budget: int | None = None,
                 adjacencies: dict | None = None):
        from .motifs import motif_adjacency

        self.graph = graph
        self.motifs = tuple(motifs)
        self.k_max = int(k_max)
        self.psi = psi
        self._lock = threading.Lock()
        self._cache: dict = {}
        self.adjacencies = dict(adjacencies or {})
        for kind in self.motifs:
            if kind not in self.adjacencies:
                self.adjacencies[kind] = motif_adjacency(graph, kind)
        self.matrices = [[self.get(kind, k, budget) for k in range(1, self.k_max + 1)]
                         for kind in self.motifs]

    @classmethod
    def single(cls, graph: Graph, matrix: MotifMatrix) -> "MotifBank":
        """A bank holding exactly one fixed propagation matrix."""
        bank = cls.__new__(cls)
        bank.graph = graph
        bank.motifs = (matrix.kind or MotifKind.EDGE,)
        bank.k_max = 1
        bank.psi = matrix.psi
        bank._lock = threading.Lock()
        bank._cache = {}
        bank.adjacencies = {}
        bank.matrices = [[matrix]]
        return bank

    def get(self, kind: MotifKind, k: int, budget: int | None = None) -> MotifMatrix:
        key = (kind, k, self.psi)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        value = k_step_matrix(self.adjacencies[kind], k, self.psi, budget=budget)
        with self._lock:
            return self._cache.setdefault(key, value)

    @property
    def n_motifs(self) -> int:
        return len(self.motifs)

    def __getitem__(self, tk):
        t, k = tk
        return self.matrices[t][k]
