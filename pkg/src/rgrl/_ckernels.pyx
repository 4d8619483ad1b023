# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the routines in _pykernels.py (same contracts)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


def local_kl(zn, hn, anchors, double tau_online, double tau_target):
    cdef double[:, ::1] z = np.ascontiguousarray(zn, dtype=np.float64)
    cdef double[:, ::1] h = np.ascontiguousarray(hn, dtype=np.float64)
    cdef long long[:, ::1] a = np.ascontiguousarray(anchors, dtype=np.int64)
    cdef Py_ssize_t n = a.shape[0], kk = a.shape[1], d = z.shape[1]
    kl_arr = np.zeros(n)
    grad_arr = np.zeros((n, d))
    cdef double[::1] kl = kl_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double[::1] s_on = np.empty(kk)
    cdef double[::1] s_tg = np.empty(kk)
    cdef double[::1] ds = np.empty(kk)
    cdef Py_ssize_t i, k, c, j, m
    cdef double dot_on, dot_tg, max_on, max_tg, lse_on, lse_tg, p, total
    for i in range(n):
        m = 0
        while m < kk and a[i, m] >= 0:
            m += 1
        if m == 0:
            continue
        max_on = -INFINITY
        max_tg = -INFINITY
        for k in range(m):
            j = a[i, k]
            dot_on = 0.0
            dot_tg = 0.0
            for c in range(d):
                dot_on += z[i, c] * h[j, c]
                dot_tg += h[i, c] * h[j, c]
            s_on[k] = dot_on / tau_online
            s_tg[k] = dot_tg / tau_target
            if s_on[k] > max_on:
                max_on = s_on[k]
            if s_tg[k] > max_tg:
                max_tg = s_tg[k]
        lse_on = 0.0
        lse_tg = 0.0
        for k in range(m):
            lse_on += exp(s_on[k] - max_on)
            lse_tg += exp(s_tg[k] - max_tg)
        lse_on = max_on + log(lse_on)
        lse_tg = max_tg + log(lse_tg)
        total = 0.0
        for k in range(m):
            # reuse buffers: s_on <- log p, ds <- log p - log q
            s_on[k] = s_on[k] - lse_on
            ds[k] = s_on[k] - (s_tg[k] - lse_tg)
            total += exp(s_on[k]) * ds[k]
        kl[i] = total
        for k in range(m):
            p = exp(s_on[k]) * (ds[k] - total) / tau_online
            j = a[i, k]
            for c in range(d):
                grad[i, c] += p * h[j, c]
    return kl_arr, grad_arr


def khop_pairs(indptr, indices, Py_ssize_t num_nodes, int min_hops=2, int max_hops=3):
    cdef long long[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef long long[::1] idx = np.ascontiguousarray(indices, dtype=np.int64)
    dist_arr = np.full(num_nodes, -1, dtype=np.int64)
    cdef long long[::1] dist = dist_arr
    cdef long long[::1] queue = np.empty(max(num_nodes, 1), dtype=np.int64)
    out_arr = np.empty((max(num_nodes, 16), 2), dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    cdef Py_ssize_t src, head, tail, u, v, e, q, a, b, start, count = 0
    cdef long long key
    for src in range(num_nodes):
        head = 0
        tail = 1
        queue[0] = src
        dist[src] = 0
        start = count
        while head < tail:
            u = queue[head]
            head += 1
            if dist[u] >= max_hops:
                continue
            for e in range(ptr[u], ptr[u + 1]):
                v = idx[e]
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    queue[tail] = v
                    tail += 1
                    if v > src and dist[v] >= min_hops:
                        if count == out.shape[0]:
                            out_arr = np.concatenate([out_arr, np.empty_like(out_arr)])
                            out = out_arr
                        out[count, 0] = src
                        out[count, 1] = v
                        count += 1
        for q in range(tail):
            dist[queue[q]] = -1
        # insertion sort of this source's targets; segments are short
        for a in range(start + 1, count):
            key = out[a, 1]
            b = a - 1
            while b >= start and out[b, 1] > key:
                out[b + 1, 1] = out[b, 1]
                b -= 1
            out[b + 1, 1] = key
    return out_arr[:count].copy()
