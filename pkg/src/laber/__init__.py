"""Importance-sampled experience replay: optimal gradient-norm sampling,
PER/GER/LaBER samplers, and the diagnostics that check them."""

__version__ = "0.1.0"

from .errors import LaberError  # noqa: E402
from .sampling import (  # noqa: E402
    expected_squared_norm,
    importance_weights,
    normalize_priorities,
    optimal_distribution,
    sample_indices,
    total_variation,
)
from .sumtree import SumTree  # noqa: E402

__all__ = [
    "LaberError",
    "SumTree",
    "expected_squared_norm",
    "importance_weights",
    "normalize_priorities",
    "optimal_distribution",
    "sample_indices",
    "total_variation",
]
