"""Sampling distributions over replay-buffer indices.

Distributions are plain 1-D float64 arrays that sum to one. Helpers here
build them from priorities or gradient norms, turn them into importance
weights, score them with the second moment of the weighted gradient, and
draw i.i.d. indices from them.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    AllZeroError,
    LengthMismatchError,
    NegativePriorityError,
    NonFiniteError,
    ZeroProbabilityError,
)
from .sumtree import SumTree

SUM_TOL = 1e-12


@dataclass
class PriorityVector:
    """Raw priorities plus the exponent/floor transform ``(v + c) ** alpha``."""

    values: np.ndarray
    alpha: float = 1.0
    c: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.c < 0:
            raise ValueError(f"c must be >= 0, got {self.c}")

    def transformed(self):
        return transform_priorities(self.values, self.alpha, self.c)


def transform_priorities(values, alpha, c):
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("priorities contain NaN or Inf")
    if np.any(values < 0):
        raise NegativePriorityError("priorities must be >= 0")
    base = values + c
    if alpha == 0:
        # 0 ** 0 would give 1 and hide an all-zero vector; keep zeros at zero.
        return np.where(base > 0, 1.0, 0.0)
    return base**alpha


def _normalize(weights, what):
    total = weights.sum()
    if total <= 0:
        raise AllZeroError(f"cannot normalize: every {what} is zero")
    probs = weights / total
    return probs


def check_distribution(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise LengthMismatchError("a distribution must be a non-empty 1-D vector")
    if not np.all(np.isfinite(p)):
        raise NonFiniteError("distribution contains NaN or Inf")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probabilities must be >= 0 and sum to 1")
    return p


def uniform(n):
    return np.full(n, 1.0 / n)


def normalize_priorities(pv):
    """Sampling distribution ``(v_i + c)^alpha / sum_j (v_j + c)^alpha``."""
    return _normalize(pv.transformed(), "transformed priority")


def importance_weights(p, beta=1.0):
    """Weights ``(1 / (N p_i)) ** beta`` that keep the estimate unbiased at beta=1."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0):
        raise ZeroProbabilityError("importance weights need every p_i > 0")
    return (1.0 / (p.size * p)) ** beta


def optimal_distribution(grad_norms):
    """Variance-minimizing distribution, proportional to the gradient norms."""
    g = np.asarray(grad_norms, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("gradient norms contain NaN or Inf")
    if np.any(g < 0):
        raise NegativePriorityError("gradient norms must be >= 0")
    return _normalize(g, "gradient norm")


def expected_squared_norm(p, grad_norms):
    """``E_{i~p}[G_i^T G_i] = (1/N^2) sum_i g_i^2 / p_i`` with ``G_i = grad_i / (N p_i)``."""
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(grad_norms, dtype=np.float64)
    if p.shape != g.shape:
        raise LengthMismatchError(f"p has shape {p.shape}, grad_norms {g.shape}")
    support = g > 0
    if np.any(p[support] <= 0):
        raise ZeroProbabilityError("p_i = 0 where the gradient norm is positive")
    n = g.size
    return float(np.sum(g[support] ** 2 / p[support]) / n**2)


def total_variation(p, q):
    """``sum_i |p_i - q_i|`` (no factor 1/2, so the range is [0, 2])."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise LengthMismatchError(f"lengths differ: {p.shape} vs {q.shape}")
    return float(np.abs(p - q).sum())


def sample_indices(p, batch_size, rng, method="inverse_cdf"):
    """Draw ``batch_size`` i.i.d. indices from ``p`` with replacement.

    Both methods consume exactly ``batch_size`` uniforms from ``rng`` and map
    them through the same left-to-right cumulative order, so they return the
    same indices for the same generator state.
    """
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    p = np.asarray(p, dtype=np.float64)
    u = rng.random(batch_size)
    if method == "inverse_cdf":
        cdf = np.cumsum(p)
        idx = np.searchsorted(cdf, u * cdf[-1], side="right")
        # u * total can round up onto the final cumsum; clamp to the last
        # positive entry.
        over = idx >= p.size
        if np.any(over):
            idx[over] = np.flatnonzero(p > 0)[-1]
        return idx
    if method == "sumtree":
        tree = SumTree(p.size)
        tree.load(p)
        return tree.find(u * tree.total)
    raise ValueError(f"unknown sampling method {method!r}")
