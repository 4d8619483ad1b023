"""Reference numpy implementations of the compiled kernels."""
import numpy as np
import scipy.sparse as sp


def local_kl(zn, hn, anchors, tau_online, tau_target):
    """Per-query ``KL(p_online || p_target)`` over padded anchor rows.

    ``zn``/``hn`` are row-normalized online predictions and target embeddings,
    ``anchors`` an ``N x K`` id matrix padded with -1. Returns ``(kl, grad)``
    where ``grad[i] = d kl[i] / d zn[i]``; empty rows give zeros.
    """
    zn = np.ascontiguousarray(zn, dtype=np.float64)
    hn = np.ascontiguousarray(hn, dtype=np.float64)
    mask = anchors >= 0
    ha = hn[np.where(mask, anchors, 0)]
    s_on = np.einsum("nd,nkd->nk", zn, ha) / tau_online
    s_tg = np.einsum("nd,nkd->nk", hn, ha) / tau_target
    s_on = np.where(mask, s_on, -np.inf)
    s_tg = np.where(mask, s_tg, -np.inf)
    empty = ~mask.any(axis=1)
    s_on[empty] = 0.0
    s_tg[empty] = 0.0
    logp = s_on - s_on.max(axis=1, keepdims=True)
    logp -= np.log(np.exp(logp).sum(axis=1, keepdims=True))
    logq = s_tg - s_tg.max(axis=1, keepdims=True)
    logq -= np.log(np.exp(logq).sum(axis=1, keepdims=True))
    p = np.where(mask, np.exp(logp), 0.0)
    with np.errstate(invalid="ignore"):  # padded slots are -inf - -inf
        diff = np.where(mask, logp - logq, 0.0)
    kl = (p * diff).sum(axis=1)
    ds = p * (diff - kl[:, None])
    grad = np.einsum("nk,nkd->nd", ds, ha) / tau_online
    kl[empty] = 0.0
    grad[empty] = 0.0
    return kl, grad


def khop_pairs(indptr, indices, num_nodes, min_hops=2, max_hops=3):
    """All ``(i, j)``, ``i < j``, whose shortest-path distance lies in ``[min_hops, max_hops]``."""
    adj = sp.csr_matrix(
        (np.ones(len(indices), dtype=np.int8), indices, indptr), shape=(num_nodes, num_nodes)
    ).astype(bool)
    within = sp.identity(num_nodes, dtype=bool, format="csr")
    frontier = within
    closer = within
    for hop in range(1, max_hops + 1):
        frontier = (frontier @ adj).astype(bool)
        within = (within + frontier).astype(bool)
        if hop == min_hops - 1:
            closer = within.copy()
    hits = (within.astype(np.int8) - closer.astype(np.int8)).tocoo()
    keep = (hits.data > 0) & (hits.row < hits.col)
    pairs = np.stack([hits.row[keep], hits.col[keep]], axis=1).astype(np.int64)
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
