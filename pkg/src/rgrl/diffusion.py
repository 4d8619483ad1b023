"""Personalized-PageRank diffusion and local anchor selection."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import SparseGraph, graph_hash, normalized_transition


@dataclass(frozen=True, eq=False)
class DiffusionTopK:
    """Per-node local anchors, padded to a rectangle.

    ``ids[i, :lengths[i]]`` are node ``i``'s anchors by descending score,
    unused slots hold -1 (ids) and 0.0 (scores).
    """

    ids: np.ndarray
    scores: np.ndarray
    lengths: np.ndarray
    teleport: float
    truncation_order: int

    @property
    def num_nodes(self) -> int:
        return self.ids.shape[0]

    @property
    def k(self) -> int:
        return self.ids.shape[1]

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        n = self.lengths[i]
        return self.ids[i, :n], self.scores[i, :n]

    def rows(self) -> list[np.ndarray]:
        return [self.ids[i, :n] for i, n in enumerate(self.lengths)]


def ppr_diffuse(g: SparseGraph, t: float = 0.15, k_max: int = 100, tol: float = 1e-9,
                rows=None) -> np.ndarray:
    """Truncated PPR scores ``sum_k t (1-t)^k T^k`` for the requested rows.

    ``T`` is the self-loop-free symmetric transition matrix. Iteration stops
    after ``k_max`` terms or once a term's max-norm over the requested rows
    drops below ``tol``.
    Returns a dense ``len(rows) x N`` array (all rows by default).
    """
    if not 0.0 < t < 1.0:
        raise ValueError(f"teleport probability must lie in (0, 1), got {t}")
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    n = g.num_nodes
    rows = np.arange(n) if rows is None else np.asarray(rows, dtype=np.int64)
    trans = normalized_transition(g, add_self_loops=False)
    walk = np.zeros((n, len(rows)))
    walk[rows, np.arange(len(rows))] = 1.0
    out = t * walk
    coef = t
    for _ in range(k_max):
        # T is symmetric, so propagating columns equals propagating rows.
        walk = trans @ walk
        coef *= 1.0 - t
        term = coef * walk
        out += term
        if np.abs(term).max(initial=0.0) < tol:
            break
    if not np.isfinite(out).all():
        raise RuntimeError("non-finite PPR scores; transition matrix is malformed")
    return np.ascontiguousarray(out.T)


def _topk_dense(block: np.ndarray, nodes: np.ndarray, k: int):
    s = np.array(block, dtype=np.float64, copy=True)
    s[np.arange(len(nodes)), nodes] = 0.0
    # stable sort on -score keeps ties in ascending column (node id) order
    order = np.argsort(-s, axis=1, kind="stable")[:, :k]
    top = np.take_along_axis(s, order, axis=1)
    valid = top > 0
    ids = np.where(valid, order, -1)
    return ids, np.where(valid, top, 0.0), valid.sum(axis=1)


def _topk_sparse(mat: sp.csr_matrix, nodes: np.ndarray, k: int):
    ids = np.full((mat.shape[0], k), -1, dtype=np.int64)
    scores = np.zeros((mat.shape[0], k))
    lengths = np.zeros(mat.shape[0], dtype=np.int64)
    for r in range(mat.shape[0]):
        lo, hi = mat.indptr[r], mat.indptr[r + 1]
        cols, vals = mat.indices[lo:hi], mat.data[lo:hi]
        keep = (cols != nodes[r]) & (vals > 0)
        cols, vals = cols[keep], vals[keep]
        order = np.lexsort((cols, -vals))[:k]
        m = len(order)
        ids[r, :m], scores[r, :m], lengths[r] = cols[order], vals[order], m
    return ids, scores, lengths


def topk_local_anchors(scores, k: int, rows=None, teleport: float = float("nan"),
                       truncation_order: int = 0) -> DiffusionTopK:
    """Keep the ``k`` highest off-diagonal positive scores of each row.

    ``scores`` is dense or scipy-sparse with one row per entry of ``rows``
    (default: row r belongs to node r). Ties go to the smaller node id.
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    nodes = np.arange(scores.shape[0]) if rows is None else np.asarray(rows, dtype=np.int64)
    if sp.issparse(scores):
        ids, sc, lengths = _topk_sparse(sp.csr_matrix(scores), nodes, k)
    else:
        ids, sc, lengths = _topk_dense(np.asarray(scores), nodes, k)
    if ids.shape[1] < k:
        pad = k - ids.shape[1]
        ids = np.pad(ids, ((0, 0), (0, pad)), constant_values=-1)
        sc = np.pad(sc, ((0, 0), (0, pad)))
    return DiffusionTopK(ids, sc, lengths, teleport, truncation_order)


def ppr_topk(g: SparseGraph, t: float, k: int, k_max: int = 100, tol: float = 1e-9,
             block_size: int = 512) -> DiffusionTopK:
    """Top-``k`` diffusion anchors for every node, computed in row blocks."""
    parts = []
    for start in range(0, g.num_nodes, block_size):
        nodes = np.arange(start, min(start + block_size, g.num_nodes))
        block = ppr_diffuse(g, t, k_max, tol, rows=nodes)
        parts.append(topk_local_anchors(block, k, rows=nodes))
    if not parts:
        empty = np.zeros((0, k))
        return DiffusionTopK(empty.astype(np.int64), empty, np.zeros(0, np.int64), t, k_max)
    return DiffusionTopK(
        np.concatenate([p.ids for p in parts]),
        np.concatenate([p.scores for p in parts]),
        np.concatenate([p.lengths for p in parts]),
        t,
        k_max,
    )


def adjacency_anchors(g: SparseGraph) -> list[np.ndarray]:
    """Each node's neighbours, best-connected first (ties by smaller id)."""
    deg = g.degrees
    out = []
    for i in range(g.num_nodes):
        nbrs = g.neighbors(i)
        out.append(nbrs[np.lexsort((nbrs, -deg[nbrs]))])
    return out


def knn_anchors(embeddings: np.ndarray, k: int) -> list[np.ndarray]:
    """Cosine nearest neighbours in embedding space, self excluded."""
    e = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    e = e / np.where(norms > 0, norms, 1.0)
    sim = e @ e.T
    np.fill_diagonal(sim, -np.inf)
    order = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    return list(order)


def anchor_purity(anchors, labels, ks) -> dict[int, float]:
    """Mean fraction of a node's first-K anchors that share its label.

    Rows with no anchors are left out of the mean; a row shorter than K uses
    all of its anchors.
    """
    labels = np.asarray(labels)
    out = {}
    for k in ks:
        fracs = []
        for i, row in enumerate(anchors):
            row = np.asarray(row)[:k]
            row = row[row >= 0]
            if len(row):
                fracs.append(np.mean(labels[row] == labels[i]))
        out[int(k)] = float(np.mean(fracs)) if fracs else float("nan")
    return out


def _cache_meta(g: SparseGraph, t: float, k: int, k_max: int, tol: float) -> dict:
    return {"teleport": t, "k": k, "k_max": k_max, "tol": tol, "graph_hash": graph_hash(g)}


def save_topk_tsv(path, topk: DiffusionTopK, meta: dict | None = None) -> None:
    path = Path(path)
    lines = []
    for i in range(topk.num_nodes):
        ids, scores = topk.row(i)
        lines.extend(f"{i}\t{j}\t{s!r}" for j, s in zip(ids.tolist(), scores.tolist()))
    path.write_text("".join(line + "\n" for line in lines))
    if meta is not None:
        path.with_suffix(".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def load_topk_tsv(path, num_nodes: int, k: int, teleport: float = float("nan"),
                  truncation_order: int = 0) -> DiffusionTopK:
    ids = np.full((num_nodes, k), -1, dtype=np.int64)
    scores = np.zeros((num_nodes, k))
    lengths = np.zeros(num_nodes, dtype=np.int64)
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        i, j, s = line.split("\t")
        i = int(i)
        ids[i, lengths[i]] = int(j)
        scores[i, lengths[i]] = float(s)
        lengths[i] += 1
    return DiffusionTopK(ids, scores, lengths, teleport, truncation_order)


def cached_ppr_topk(g: SparseGraph, path, t: float, k: int, k_max: int = 100,
                    tol: float = 1e-9) -> tuple[DiffusionTopK, bool]:
    """Load ``path`` if its sidecar metadata matches, else recompute and write.

    Returns the anchors and whether they were recomputed.
    """
    path = Path(path)
    meta = _cache_meta(g, t, k, k_max, tol)
    meta_path = path.with_suffix(".meta.json")
    if path.exists() and meta_path.exists() and json.loads(meta_path.read_text()) == meta:
        return load_topk_tsv(path, g.num_nodes, k, t, k_max), False
    topk = ppr_topk(g, t, k, k_max, tol)
    save_topk_tsv(path, topk, meta)
    return topk, True
