"""Non-learned slice interpolators."""

from __future__ import annotations

import numpy as np


def _pair(lower, upper):
    lower, upper = np.asarray(lower), np.asarray(upper)
    if lower.shape != upper.shape:
        raise ValueError(f"shape mismatch: {lower.shape} vs {upper.shape}")
    return lower, upper


def interpolate_linear(lower, upper) -> np.ndarray:
    """Elementwise midpoint; the target sits halfway between the inputs."""
    lower, upper = _pair(lower, upper)
    return (lower + upper) / 2


def interpolate_nearest(lower, upper, policy: str = "lower") -> np.ndarray:
    """Copy one neighbour; both are equidistant, so ``policy`` picks which."""
    lower, upper = _pair(lower, upper)
    if policy == "lower":
        return lower.copy()
    if policy == "upper":
        return upper.copy()
    raise ValueError(f"nearest policy must be 'lower' or 'upper', got {policy!r}")


BASELINES = {
    "linear": interpolate_linear,
    "nearest": interpolate_nearest,
    "nearest_upper": lambda lo, up: interpolate_nearest(lo, up, "upper"),
}
