"""Finite-difference oracle for the online-path gradients of the full loss.

The oracle re-implements the forward composite independently (dense
propagation matrix, per-query distribution loop). Each rectifier's active
side is frozen at the unperturbed point, so a central difference measures
the derivative of the smooth piece the analytic gradient refers to instead
of averaging across a kink. Differences use the five-point central stencil,
whose truncation error is O(h^4) rather than O(h^2).
"""
import numpy as np

from rgrl import encoder as enc
from rgrl.graph import AugmentationConfig, augment
from rgrl.loss import kl_loss, online_distribution, relational_loss, target_distribution

from conftest import random_graph

TAUS = (0.1, 0.01, 0.1, 1.0)


def make_problem(seed=0, n=20, features=8, dim=8, hidden=(8,), predictor_hidden=8):
    g = random_graph(n, 0.2, features, seed=seed)
    state = enc.init_state(features, hidden, dim, predictor_hidden, seed + 100)
    # move the target away from the online copy so both sides are generic
    rng = np.random.default_rng(seed + 200)
    for v in state.target.values():
        v += 0.1 * rng.standard_normal(v.shape)
    v1 = augment(g, AugmentationConfig(0.2, 0.2), seed + 1)
    v2 = augment(g, AugmentationConfig(0.3, 0.3), seed + 2)
    glob = rng.choice(n, size=5, replace=False)
    local = np.stack([rng.choice([j for j in range(n) if j != i], size=3, replace=False) for i in range(n)])
    return state, v1, v2, glob, local


def dense_propagation(view):
    n = view.num_nodes
    a = np.eye(n)
    a[view.edges[:, 0], view.edges[:, 1]] = 1.0
    a[view.edges[:, 1], view.edges[:, 0]] = 1.0
    d = 1 / np.sqrt(a.sum(axis=1))
    return d[:, None] * a * d[None, :]


def rect(x, slope, pattern):
    return np.where(pattern, x, slope * x)


def oracle_embed(params, view, patterns=None):
    """Dense GCN forward; returns output and the sign pattern of each layer."""
    p = dense_propagation(view)
    h = np.asarray(view.features, dtype=np.float64)
    if view.feature_mask is not None:
        h = h * view.feature_mask
    seen = []
    layer = 0
    while f"W{layer}" in params:
        pre = p @ h @ params[f"W{layer}"]
        pat = pre > 0 if patterns is None else patterns[layer]
        seen.append(pat)
        h = rect(pre, params[f"a{layer}"][0], pat)
        layer += 1
    return h, seen


def oracle_predict(params, h, pattern=None):
    pre = h @ params["W0"]
    pat = pre > 0 if pattern is None else pattern
    return rect(pre, params["a0"][0], pat) @ params["W1"], pat


def oracle_loss(z, h, glob, local, lam, taus=TAUS):
    n = len(z)
    g = sum(kl_loss(online_distribution(z, h, i, glob, taus[0]), target_distribution(h, i, glob, taus[1]))
            for i in range(n)) / n
    rows = [(i, r[r >= 0]) for i, r in enumerate(local)]
    rows = [(i, r) for i, r in rows if len(r)]
    loc = sum(kl_loss(online_distribution(z, h, i, r, taus[2]), target_distribution(h, i, r, taus[3]))
              for i, r in rows) / max(len(rows), 1)
    return g + lam * loc


def analytic(state, v1, v2, glob, local, lam, taus=TAUS):
    _, z, cache = enc.online_forward(state, v1)
    h = enc.target_forward(state, v2)
    terms = relational_loss(z, h, glob, local, lam, *taus)
    return enc.online_backward(state, cache, terms.grad_z), terms.total


def check(state, v1, v2, glob, local, lam=1.0, step=1e-3, taus=TAUS):
    """Per-parameter relative error ``max|a - f| / max(max|a|, max|f|)``.

    Returns ``(errors, analytic_loss, oracle_loss)``.
    """
    grads, total = analytic(state, v1, v2, glob, local, lam, taus)
    h_target, _ = oracle_embed(state.target, v2)
    _, gcn_pat = oracle_embed(state.online, v1)
    h_online, _ = oracle_embed(state.online, v1, gcn_pat)
    _, pred_pat = oracle_predict(state.predictor, h_online)

    def value():
        h_on, _ = oracle_embed(state.online, v1, gcn_pat)
        z, _ = oracle_predict(state.predictor, h_on, pred_pat)
        return oracle_loss(z, h_target, glob, local, lam, taus)

    base = value()
    errors = {}
    for name, param in state.online_parameters().items():
        fd = np.zeros_like(param)
        for idx in np.ndindex(*param.shape):
            orig = param[idx]
            f = {}
            for k in (-2, -1, 1, 2):
                param[idx] = orig + k * step
                f[k] = value()
            param[idx] = orig
            fd[idx] = (f[-2] - 8 * f[-1] + 8 * f[1] - f[2]) / (12 * step)
        scale = max(np.abs(fd).max(), np.abs(grads[name]).max(), 1e-12)
        errors[name] = float(np.abs(fd - grads[name]).max() / scale)
    return errors, total, base
