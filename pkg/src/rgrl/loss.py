"""Query-to-anchor similarity distributions and the KL objective.

For a query ``i`` and anchors ``N_i`` the target distribution is the softmax
of ``cos(h_i, h_j) / tau_target`` over target embeddings ``h``; the online
distribution uses the online prediction ``z_i`` for the query and the same
target anchor embeddings at ``tau_online``. Everything on the target side is
a constant: gradients only reach ``z``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

NORM_EPS = 1e-12


class ZeroNormError(ValueError):
    pass


def _unit(v: np.ndarray, node: int) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ZeroNormError(f"node {node} has a zero-norm embedding; cosine similarity is undefined")
    return v / norm


def _check_anchors(anchors) -> np.ndarray:
    anchors = np.asarray(anchors, dtype=np.int64)
    if anchors.size == 0:
        raise ValueError("anchor set is empty")
    return anchors


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def target_distribution(h_target: np.ndarray, query: int, anchors, tau_target: float) -> np.ndarray:
    if tau_target <= 0:
        raise ValueError(f"temperature must be positive, got {tau_target}")
    anchors = _check_anchors(anchors)
    q = _unit(h_target[query], query)
    sims = np.array([q @ _unit(h_target[j], j) for j in anchors])
    return softmax(sims / tau_target)


def online_distribution(z_online: np.ndarray, h_target: np.ndarray, query: int, anchors,
                        tau_online: float) -> np.ndarray:
    if tau_online <= 0:
        raise ValueError(f"temperature must be positive, got {tau_online}")
    anchors = _check_anchors(anchors)
    q = _unit(z_online[query], query)
    sims = np.array([q @ _unit(h_target[j], j) for j in anchors])
    return softmax(sims / tau_online)


def kl_loss(p_online, p_target) -> float:
    """``sum_i sum_j p(j) [log p(j) - log q(j)]`` with ``0 log 0 = 0``."""
    p = np.atleast_2d(np.asarray(p_online, dtype=np.float64))
    q = np.atleast_2d(np.asarray(p_target, dtype=np.float64))
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    pos = p > 0
    terms = np.zeros_like(p)
    terms[pos] = p[pos] * (np.log(p[pos]) - np.log(q[pos]))
    return float(terms.sum())


def combined_loss(glob_loss: float, local_loss: float, lam: float) -> float:
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    return glob_loss + lam * local_loss


def normalize_rows(m: np.ndarray, eps: float = NORM_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize; all-zero rows stay zero (norm clamped at ``eps``)."""
    norms = np.linalg.norm(m, axis=1)
    safe = np.maximum(norms, eps)
    return m / safe[:, None], safe


def normalize_backward(unit: np.ndarray, norms: np.ndarray, grad_unit: np.ndarray,
                       eps: float = NORM_EPS) -> np.ndarray:
    radial = np.sum(unit * grad_unit, axis=1, keepdims=True)
    grad = (grad_unit - unit * radial) / norms[:, None]
    # direction of a zero row is undefined: treat it as constant
    grad[norms <= eps] = 0.0
    return grad


def global_kl(zn: np.ndarray, hn: np.ndarray, anchors: np.ndarray, tau_online: float,
              tau_target: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-query KL against one shared anchor set, and ``d kl_i / d zn_i``."""
    kl, grad, _ = _global_kl(zn, hn, anchors, tau_online, tau_target)
    return kl, grad


def _global_kl(zn, hn, anchors, tau_online, tau_target):
    ha = hn[anchors]
    s_on = (zn @ ha.T) / tau_online
    s_tg = (hn @ ha.T) / tau_target
    logp = log_softmax(s_on)
    logq = log_softmax(s_tg)
    p = np.exp(logp)
    diff = logp - logq
    kl = np.sum(p * diff, axis=1)
    ds = p * (diff - kl[:, None])
    max_logit = max(np.abs(s_on).max(initial=0.0), np.abs(s_tg).max(initial=0.0))
    return kl, (ds @ ha) / tau_online, float(max_logit)


def local_kl(zn: np.ndarray, hn: np.ndarray, anchor_ids: np.ndarray, tau_online: float,
             tau_target: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-query KL over each query's own padded anchor row (-1 = unused)."""
    return kernels.local_kl(zn, hn, anchor_ids, tau_online, tau_target)


@dataclass
class LossTerms:
    glob: float
    local: float
    total: float
    grad_z: np.ndarray
    max_logit: float


def relational_loss(z_online: np.ndarray, h_target: np.ndarray, global_anchors: np.ndarray,
                    local_anchors: np.ndarray | None, lam: float, tau_online_glob: float,
                    tau_target_glob: float, tau_online_local: float,
                    tau_target_local: float) -> LossTerms:
    """Mean global KL plus ``lam`` times mean local KL, with ``dL/dZ``.

    Each term is averaged over the queries that contribute to it; queries
    with an empty local row add nothing to the local term.
    """
    zn, znorm = normalize_rows(np.asarray(z_online, dtype=np.float64))
    hn, _ = normalize_rows(np.asarray(h_target, dtype=np.float64))
    n = zn.shape[0]
    kl_g, grad_g, max_logit = _global_kl(zn, hn, np.asarray(global_anchors, dtype=np.int64),
                                         tau_online_glob, tau_target_glob)
    glob = float(kl_g.sum() / n)
    grad_unit = grad_g / n
    local = 0.0
    if local_anchors is not None and lam != 0:
        contributing = int(np.count_nonzero((local_anchors >= 0).any(axis=1)))
        if contributing:
            kl_l, grad_l = local_kl(zn, hn, local_anchors, tau_online_local, tau_target_local)
            local = float(kl_l.sum() / contributing)
            grad_unit = grad_unit + (lam / contributing) * grad_l
    total = combined_loss(glob, local, lam)
    return LossTerms(glob, local, total, normalize_backward(zn, znorm, grad_unit), max_logit)
