from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgrl import _pykernels, kernels
from rgrl.diffusion import ppr_topk
from rgrl.loss import kl_loss, normalize_rows, online_distribution, target_distribution

from conftest import random_graph

try:
    from rgrl import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = [_pykernels] + ([_ckernels] if _ckernels is not None else [])
needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")


def test_dispatch_reports_backend():
    assert kernels.BACKEND in ("cython", "python")
    if _ckernels is not None:
        assert kernels.BACKEND == "cython" or kernels.local_kl is _pykernels.local_kl


def padded_anchors(rng, n, k):
    ids = np.full((n, k), -1, dtype=np.int64)
    for i in range(n):
        m = rng.integers(0, k + 1)
        ids[i, :m] = rng.choice(n, size=m, replace=False)
    return ids


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_local_kl_matches_per_query_definition(impl):
    rng = np.random.default_rng(0)
    z, h = rng.standard_normal((12, 5)), rng.standard_normal((12, 5))
    ids = padded_anchors(rng, 12, 4)
    kl, _ = impl.local_kl(normalize_rows(z)[0], normalize_rows(h)[0], ids, 0.3, 0.7)
    for i in range(12):
        row = ids[i][ids[i] >= 0]
        if len(row) == 0:
            assert kl[i] == 0.0
            continue
        p = online_distribution(z, h, i, row, 0.3)
        q = target_distribution(h, i, row, 0.7)
        assert kl[i] == pytest.approx(kl_loss(p, q), rel=1e-10, abs=1e-14)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_local_kl_gradient_finite_difference(impl):
    rng = np.random.default_rng(1)
    zn, hn = normalize_rows(rng.standard_normal((6, 4)))[0], normalize_rows(rng.standard_normal((6, 4)))[0]
    ids = padded_anchors(rng, 6, 3)
    _, grad = impl.local_kl(zn, hn, ids, 0.2, 0.5)
    h = 1e-6
    for i in range(6):
        for c in range(4):
            up, dn = zn.copy(), zn.copy()
            up[i, c] += h
            dn[i, c] -= h
            fd = (impl.local_kl(up, hn, ids, 0.2, 0.5)[0][i] - impl.local_kl(dn, hn, ids, 0.2, 0.5)[0][i]) / (2 * h)
            assert grad[i, c] == pytest.approx(fd, abs=1e-7)


@needs_ext
@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 30), k=st.integers(1, 8),
       tau_on=st.floats(0.01, 2.0), tau_tg=st.floats(0.01, 2.0))
def test_backends_agree_local_kl(seed, n, k, tau_on, tau_tg):
    rng = np.random.default_rng(seed)
    zn = normalize_rows(rng.standard_normal((n, 6)))[0]
    hn = normalize_rows(rng.standard_normal((n, 6)))[0]
    ids = padded_anchors(rng, n, min(k, n))
    a_kl, a_g = _pykernels.local_kl(zn, hn, ids, tau_on, tau_tg)
    b_kl, b_g = _ckernels.local_kl(zn, hn, ids, tau_on, tau_tg)
    np.testing.assert_allclose(b_kl, a_kl, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(b_g, a_g, rtol=1e-9, atol=1e-10)


def bfs_distances(g, src):
    dist = {src: 0}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in g.neighbors(u).tolist():
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def brute_pairs(g, lo, hi):
    out = []
    for i in range(g.num_nodes):
        dist = bfs_distances(g, i)
        out.extend((i, j) for j, d in dist.items() if j > i and lo <= d <= hi)
    return sorted(out)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
@pytest.mark.parametrize("seed", range(5))
def test_khop_pairs_against_bfs(impl, seed):
    g = random_graph(30, 0.08, 1, seed=seed)
    got = impl.khop_pairs(g.indptr, g.indices, g.num_nodes, 2, 3)
    assert [tuple(p) for p in got.tolist()] == brute_pairs(g, 2, 3)


def test_khop_path_example():
    from conftest import path
    g = path(4)
    assert kernels.khop_pairs(g.indptr, g.indices, 4, 2, 3).tolist() == [[0, 2], [0, 3], [1, 3]]


@needs_ext
def test_backends_agree_end_to_end_anchors():
    # kernels feed the same precomputed anchors; both must produce identical losses
    g = random_graph(40, 0.1, 1, seed=9)
    ids = ppr_topk(g, 0.15, 4).ids
    rng = np.random.default_rng(3)
    zn = normalize_rows(rng.standard_normal((40, 8)))[0]
    hn = normalize_rows(rng.standard_normal((40, 8)))[0]
    np.testing.assert_allclose(_ckernels.local_kl(zn, hn, ids, 0.1, 1.0)[0],
                               _pykernels.local_kl(zn, hn, ids, 0.1, 1.0)[0], rtol=1e-11)
