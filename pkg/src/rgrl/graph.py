"""Immutable undirected graphs in CSR form, normalization and augmentation."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """Undirected simple graph with dense node features.

    ``indptr``/``indices`` hold the symmetric adjacency in CSR form with sorted
    column indices per row. ``edges`` lists every undirected edge once as
    ``(i, j)`` with ``i < j``, in lexicographic order.
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    feature_mask: np.ndarray | None = field(default=None, compare=False)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr).astype(np.int64)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices), dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.num_nodes, self.num_nodes))

    def masked_features(self) -> np.ndarray:
        """Features with the augmentation's column mask applied."""
        if self.feature_mask is None:
            return self.features
        return self.features * self.feature_mask.astype(self.features.dtype)

    def with_edges(self, edges: np.ndarray) -> "SparseGraph":
        """Same nodes/features/labels over a subset of this graph's edges."""
        indptr, indices = _csr_from_pairs(self.num_nodes, edges)
        return SparseGraph(self.num_nodes, indptr, indices, edges, self.features, self.labels, self.feature_mask)


def _canonical_pairs(num_nodes: int, pairs: np.ndarray) -> np.ndarray:
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    keep = lo != hi
    keys = np.unique(lo[keep] * num_nodes + hi[keep])
    return np.stack([keys // num_nodes, keys % num_nodes], axis=1).astype(np.int64)


def _csr_from_pairs(num_nodes: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((dst, src))
    counts = np.bincount(src, minlength=num_nodes)
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, dst[order].astype(np.int64)


def build_graph(edge_list, features, labels=None, num_nodes: int | None = None) -> SparseGraph:
    """Build a deduplicated, symmetrized graph.

    ``edge_list`` may contain both directions and duplicates; self-loops are
    dropped. ``num_nodes`` defaults to the feature row count.
    """
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise GraphError(f"features must be a 2-D matrix, got shape {features.shape}")
    n = features.shape[0] if num_nodes is None else int(num_nodes)
    if features.shape[0] != n:
        raise GraphError(f"feature matrix has {features.shape[0]} rows but graph has {n} nodes")
    pairs = np.asarray(edge_list, dtype=np.int64).reshape(-1, 2)
    if len(pairs) and (pairs.min() < 0 or pairs.max() >= n):
        bad = int(np.flatnonzero((pairs < 0).any(axis=1) | (pairs >= n).any(axis=1))[0])
        raise GraphError(f"edge {bad} = {tuple(pairs[bad])} references a node outside [0, {n})")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (n,):
            raise GraphError(f"labels must have shape ({n},), got {labels.shape}")
    edges = _canonical_pairs(n, pairs)
    indptr, indices = _csr_from_pairs(n, edges)
    return SparseGraph(n, indptr, indices, edges, features, labels)


def normalized_transition(g: SparseGraph, add_self_loops: bool) -> sp.csr_matrix:
    """Symmetric normalization ``D^-1/2 A D^-1/2``.

    With ``add_self_loops`` the matrix is built from ``A + I`` (encoder
    propagation); otherwise from the raw adjacency, where isolated nodes get
    an all-zero row.
    """
    a = g.adjacency
    if add_self_loops:
        a = (a + sp.identity(g.num_nodes, format="csr")).tocsr()
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d = sp.diags(inv_sqrt)
    t = (d @ a @ d).tocsr()
    t.sort_indices()
    return t


@dataclass(frozen=True)
class AugmentationConfig:
    feature_mask_prob: float = 0.0
    edge_drop_prob: float = 0.0

    def __post_init__(self):
        for name in ("feature_mask_prob", "edge_drop_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise GraphError(f"{name} must lie in [0, 1], got {p}")


def augment(g: SparseGraph, cfg: AugmentationConfig, rng_seed) -> SparseGraph:
    """Drop undirected edges and mask feature columns.

    Each undirected edge survives with probability ``1 - edge_drop_prob``
    (both directions go together). One column mask is drawn per call and
    shared by all nodes; it is stored on the returned view rather than
    applied to a copy of the features.
    """
    rng = np.random.default_rng(rng_seed)
    keep_edge = rng.random(g.num_edges) >= cfg.edge_drop_prob
    keep_col = rng.random(g.num_features) >= cfg.feature_mask_prob
    if g.feature_mask is not None:
        keep_col &= g.feature_mask
    edges = g.edges[keep_edge]
    indptr, indices = _csr_from_pairs(g.num_nodes, edges)
    return SparseGraph(g.num_nodes, indptr, indices, edges, g.features, g.labels, keep_col)


def graph_hash(g: SparseGraph) -> str:
    h = hashlib.sha256()
    h.update(np.int64(g.num_nodes).tobytes())
    h.update(np.ascontiguousarray(g.edges, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(g.features, dtype="<f4").tobytes())
    return h.hexdigest()
