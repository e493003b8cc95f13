"""Bounded-range and total-variation penalties with analytic gradients.

Both losses are normalized by the number of scalar entries H*W*C, so the
attack weight presets stay meaningful across channel counts. Values and
gradients are plain numpy; no graph recording is needed because the
gradients are closed-form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class RegularizerValue:
    """A non-negative penalty and its gradient w.r.t. every pixel."""

    value: float
    gradient: np.ndarray


def br_loss(image: np.ndarray) -> RegularizerValue:
    """Penalty for intensities outside [0, 255], averaged over entries.

    Per entry: -p for p <= 0, p - 255 for p >= 255, 0 inside. Gradient is
    -1/N below 0 and +1/N above 255 (0 at the kinks themselves).
    """
    x = np.asarray(image, dtype=np.float64)
    n = x.size
    below = x < 0.0
    above = x > 255.0
    value = (np.where(below, -x, 0.0).sum() + np.where(above, x - 255.0, 0.0).sum()) / n
    gradient = np.zeros_like(x)
    gradient[below] = -1.0 / n
    gradient[above] = 1.0 / n
    return RegularizerValue(float(value), gradient)


def tv_loss(image: np.ndarray) -> RegularizerValue:
    """Sum of squared forward differences over existing neighbors, / (H*W*C).

    Horizontal and vertical terms are summed only where the neighbor lies
    inside the image (no wrap, no padding). Images with a single pixel per
    channel have no neighbors at all and are rejected.
    """
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3:
        raise InputError(f"expected an (H,W,C) image, got shape {x.shape}")
    h, w, _ = x.shape
    if h < 2 and w < 2:
        raise InputError(f"image {h}x{w} has no neighboring pixels")
    n = x.size
    dx = x[:, 1:, :] - x[:, :-1, :]
    dy = x[1:, :, :] - x[:-1, :, :]
    value = (np.square(dx).sum() + np.square(dy).sum()) / n
    gradient = np.zeros_like(x)
    gradient[:, :-1, :] -= 2.0 * dx
    gradient[:, 1:, :] += 2.0 * dx
    gradient[:-1, :, :] -= 2.0 * dy
    gradient[1:, :, :] += 2.0 * dy
    gradient /= n
    return RegularizerValue(float(value), gradient)


def clamp_to_range(image: np.ndarray) -> np.ndarray:
    """Clip every pixel into [0, 255]; in-range pixels pass through."""
    return np.clip(np.asarray(image, dtype=np.float64), 0.0, 255.0)
