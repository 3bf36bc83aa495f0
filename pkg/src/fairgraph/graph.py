"""Attributed graph container, structural statistics and mean aggregation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor

__all__ = [
    "Graph",
    "NeighborIndex",
    "HomophilyUndefinedError",
    "canonical_edges",
    "social_homophily",
    "graph_density",
    "average_degree",
    "mean_aggregate",
    "aggregation_matrix",
    "cosine_similarity",
    "isolated_warnings",
]


class HomophilyUndefinedError(ValueError):
    pass


def canonical_edges(edges, n: int | None = None) -> np.ndarray:
    """Normalise an edge list to sorted unique ``(min, max)`` pairs without self-loops."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if np.any(e < 0) or (n is not None and np.any(e >= n)):
        raise ValueError("edge endpoint out of range")
    e = np.sort(e, axis=1)
    e = e[e[:, 0] != e[:, 1]]
    if len(e) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(e, axis=0)


@dataclass(frozen=True)
class NeighborIndex:
    """CSR adjacency: ``indices[indptr[i]:indptr[i+1]]`` are the sorted neighbours of ``i``."""

    indptr: np.ndarray
    indices: np.ndarray

    @classmethod
    def from_edges(cls, edges: np.ndarray, n: int) -> "NeighborIndex":
        if len(edges) == 0:
            return cls(np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        adj.sort_indices()
        return cls(adj.indptr.astype(np.int64), adj.indices.astype(np.int64))

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph with binary labels and sensitive attribute.

    Parameters
    ----------
    features : ndarray of shape (n, d)
    labels : ndarray of shape (n,)
        Binary target ``y``.
    sensitive : ndarray of shape (n,)
        Binary group membership ``s``.
    edges : array-like of shape (m, 2)
        Undirected pairs; canonicalised on construction (self-loops and
        duplicates removed).
    """

    features: np.ndarray
    labels: np.ndarray
    sensitive: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        n = x.shape[0]
        y = np.asarray(self.labels).astype(np.int64).reshape(-1)
        s = np.asarray(self.sensitive).astype(np.int64).reshape(-1)
        if len(y) != n or len(s) != n:
            raise ValueError("labels and sensitive must have one entry per node")
        for name, arr in (("labels", y), ("sensitive", s)):
            if arr.size and not np.isin(arr, (0, 1)).all():
                raise ValueError(f"{name} must be binary in {{0, 1}}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "sensitive", s)
        object.__setattr__(self, "edges", canonical_edges(self.edges, n))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def neighbor_index(self) -> NeighborIndex:
        return NeighborIndex.from_edges(self.edges, self.n)

    @property
    def degree(self) -> np.ndarray:
        return self.neighbor_index.degree

    def with_features(self, features) -> "Graph":
        return Graph(features, self.labels, self.sensitive, self.edges)

    def permute(self, perm) -> "Graph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Graph(self.features[perm], self.labels[perm], self.sensitive[perm], inv[self.edges])


def social_homophily(g: Graph) -> float:
    """Fraction of undirected edges joining two nodes of the same group."""
    if g.n_edges == 0:
        raise HomophilyUndefinedError("undefined homophily: graph has no edges")
    s = g.sensitive
    return float(np.mean(s[g.edges[:, 0]] == s[g.edges[:, 1]]))


def graph_density(g: Graph) -> float:
    """Edges per node, ``|E| / n``."""
    if g.n < 1:
        raise ValueError("graph has no nodes")
    return g.n_edges / g.n


def average_degree(g: Graph) -> float:
    if g.n < 1:
        raise ValueError("graph has no nodes")
    return 2.0 * g.n_edges / g.n


class _IsolateCounter:
    def __init__(self):
        self.count = 0


isolated_warnings = _IsolateCounter()


def aggregation_matrix(g: Graph, self_loops: bool = True) -> sp.csr_matrix:
    """Row-normalised adjacency ``D^-1 A`` (optionally with ``A + I``).

    Rows of degree-zero nodes are left empty, so they aggregate to zero.
    """
    key = "_agg_self" if self_loops else "_agg_plain"
    cached = g.__dict__.get(key)
    if cached is not None:
        return cached
    idx = g.neighbor_index
    n = g.n
    rows = np.repeat(np.arange(n), idx.degree)
    cols = idx.indices
    if self_loops:
        rows = np.concatenate([rows, np.arange(n)])
        cols = np.concatenate([cols, np.arange(n)])
    deg = np.bincount(rows, minlength=n).astype(np.float64)
    with np.errstate(divide="ignore"):
        inv = np.where(deg > 0, 1.0 / deg, 0.0)
    mat = sp.csr_matrix((inv[rows], (rows, cols)), shape=(n, n))
    g.__dict__[key] = mat
    return mat


def mean_aggregate(g: Graph, h: Tensor, self_loops: bool = True) -> Tensor:
    """Mean of neighbour rows for every node, recorded for differentiation.

    Nodes with no neighbours (and ``self_loops=False``) get a zero row; each
    such call increments ``isolated_warnings.count``.
    """
    h = h if isinstance(h, Tensor) else Tensor(h)
    if h.shape[0] != g.n:
        raise ValueError(f"expected {g.n} rows, got {h.shape[0]}")
    if not self_loops and np.any(g.degree == 0):
        isolated_warnings.count += 1
        warnings.warn("isolated nodes aggregate to zero rows", RuntimeWarning, stacklevel=2)
    mat = aggregation_matrix(g, self_loops)
    x = h.data
    flat = x.reshape(g.n, -1)
    out = np.asarray(mat @ flat).reshape(x.shape)
    mat_t = mat.T.tocsr()

    def backward(grad):
        return (np.asarray(mat_t @ grad.reshape(g.n, -1)).reshape(x.shape),)

    return Tensor.record(out, (h,), backward)


def cosine_similarity(xi, xj) -> float:
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    xj = np.asarray(xj, dtype=np.float64).reshape(-1)
    if xi.shape != xj.shape:
        raise ValueError("dimension mismatch")
    ni, nj = np.linalg.norm(xi), np.linalg.norm(xj)
    if ni == 0 or nj == 0:
        return 0.0
    return float(np.clip(xi @ xj / (ni * nj), -1.0, 1.0))
