"""Inverse-degree weighted sampling of global anchor nodes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class AnchorDistribution:
    weights: np.ndarray
    probs: np.ndarray
    alpha: float
    beta: float

    @property
    def num_nodes(self) -> int:
        return len(self.probs)


def build_distribution(degrees, alpha: float = 0.5, beta: float = 0.1) -> AnchorDistribution:
    """Weights ``alpha ** ln(deg + 1) + beta``, normalized to probabilities.

    With ``0 < alpha < 1`` the weight shrinks as degree grows, so low-degree
    nodes are drawn more often.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie strictly between 0 and 1, got {alpha}")
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    deg = np.asarray(degrees, dtype=np.float64)
    if deg.size == 0:
        raise ValueError("cannot build an anchor distribution over zero nodes")
    if (deg < 0).any():
        raise ValueError("degrees must be nonnegative")
    weights = np.power(alpha, np.log(deg + 1.0)) + beta
    return AnchorDistribution(weights, weights / weights.sum(), float(alpha), float(beta))


def sample_global_anchors(dist: AnchorDistribution, k: int, rng_seed) -> np.ndarray:
    """Draw ``k`` distinct nodes, successively renormalizing over the rest.

    Implemented as Gumbel-top-k: perturbing log-probabilities with iid Gumbel
    noise and keeping the ``k`` largest has the same law as sequential draws
    without replacement. Returned in draw order.
    """
    n = dist.num_nodes
    if not 1 <= k <= n:
        raise ValueError(f"K_glob must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(rng_seed)
    with np.errstate(divide="ignore"):
        keys = np.log(dist.probs) + rng.gumbel(size=n)
    if k == n:
        return np.argsort(-keys, kind="stable")
    top = np.argpartition(-keys, k - 1)[:k]
    return top[np.argsort(-keys[top], kind="stable")]
