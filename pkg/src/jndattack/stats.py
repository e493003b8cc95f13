"""Statistical similarity between original and adversarial populations.

Covers per-channel color histograms, their KL divergence (summed over
channels), Gaussian kernel density estimates of sample populations, and
the cross-method aggregation consumed by the compare/stats commands.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError

HISTOGRAM_BINS = 256
Q_SMOOTHING = 1e-10  # added to every q bin before renormalizing
KDE_GRID_SIZE = 512


@dataclass(frozen=True)
class ColorHistogram:
    """Per-channel normalized intensity histogram, shape (C, 256)."""

    bins: np.ndarray

    @property
    def channels(self) -> int:
        return self.bins.shape[0]


@dataclass(frozen=True)
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float


def color_histogram(image) -> ColorHistogram:
    """Integer-binned (floor) histogram per channel, normalized to sum 1."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise InputError(f"expected an (H,W,C) image, got shape {x.shape}")
    if x.min() < 0.0 or x.max() > 255.0:
        raise InputError("pixels outside [0, 255]; clamp before building histograms")
    channels = x.shape[2]
    bins = np.empty((channels, HISTOGRAM_BINS))
    for ch in range(channels):
        idx = np.floor(x[:, :, ch]).astype(np.int64).ravel()
        idx = np.minimum(idx, HISTOGRAM_BINS - 1)  # exact 255.0 lands in bin 255
        counts = np.bincount(idx, minlength=HISTOGRAM_BINS).astype(np.float64)
        bins[ch] = counts / counts.sum()
    return ColorHistogram(bins)


def kl_divergence(p: ColorHistogram, q: ColorHistogram) -> float:
    """Sum over channels of KL(p || q) in nats, with q smoothed.

    Every q bin receives a small additive constant and is renormalized, so
    empty adversarial bins cannot divide by zero; p bins equal to zero
    contribute nothing. The result is always >= 0.
    """
    if p.channels != q.channels:
        raise DimensionError(f"channel counts differ: {p.channels} vs {q.channels}")
    total = 0.0
    for ch in range(p.channels):
        pb = p.bins[ch]
        qb = q.bins[ch] + Q_SMOOTHING
        qb = qb / qb.sum()
        mask = pb > 0.0
        total += float(np.sum(pb[mask] * np.log(pb[mask] / qb[mask])))
    return max(total, 0.0)


def silverman_bandwidth(samples: np.ndarray) -> float:
    """1.06 * sigma * n^(-1/5); falls back to a small width for constant data."""
    sigma = float(np.std(samples, ddof=1))
    if sigma == 0.0:
        return 1e-3 * max(1.0, abs(float(samples[0])))
    return 1.06 * sigma * len(samples) ** (-0.2)


def kde(samples, bandwidth="auto", grid_size=KDE_GRID_SIZE) -> DensityEstimate:
    """Gaussian-kernel density on a grid spanning [min-3h, max+3h].

    The curve is renormalized so its trapezoidal integral over the grid is
    exactly 1, which also absorbs the kernel mass truncated at the grid
    boundary for very tight sample sets.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise InputError(f"need at least 2 samples for a density estimate, got {x.size}")
    if bandwidth in ("auto", "silverman"):
        h = silverman_bandwidth(x)
    else:
        h = float(bandwidth)
        if h <= 0.0:
            raise InputError("bandwidth must be positive")
    grid = np.linspace(x.min() - 3.0 * h, x.max() + 3.0 * h, grid_size)
    z = (grid[:, None] - x[None, :]) / h
    density = np.exp(-0.5 * z * z).sum(axis=1) / (x.size * h * np.sqrt(2.0 * np.pi))
    area = np.trapz(density, grid)
    if area > 0.0:
        density = density / area
    return DensityEstimate(grid=grid, density=density, bandwidth=h)


@dataclass(frozen=True)
class MethodStats:
    count: int
    kl_samples: np.ndarray
    l2_samples: np.ndarray
    kl_mean: float
    kl_std: float
    l2_mean: float
    l2_std: float
    kl_kde: DensityEstimate
    l2_kde: DensityEstimate


@dataclass(frozen=True)
class StatsReport:
    methods: dict
    sharpest_l2_method: str
    conventions: dict


def squared_l2(original, adversarial) -> float:
    """Sum of squared per-pixel differences (the distance population metric)."""
    a = np.asarray(original, dtype=np.float64)
    b = np.asarray(adversarial, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.square(b - a).sum())


def population_compare(pairs_by_method: dict) -> StatsReport:
    """Aggregate per-method image pairs (original, adversarial) into KL and
    squared-L2 sample populations with kernel density estimates.

    Only successful attacks should be passed in. The method whose L2
    population has the smallest mean is flagged as sharpest near zero.
    """
    if not pairs_by_method:
        raise InputError("no methods to compare")
    methods = {}
    for name, pairs in pairs_by_method.items():
        if not pairs:
            raise InputError(f"method {name!r} has an empty result population")
        kl_samples = np.array([
            kl_divergence(color_histogram(orig), color_histogram(adv))
            for orig, adv in pairs
        ])
        l2_samples = np.array([squared_l2(orig, adv) for orig, adv in pairs])
        if len(pairs) >= 2:
            kl_est = kde(kl_samples)
            l2_est = kde(l2_samples)
        else:
            point = float(kl_samples[0])
            kl_est = DensityEstimate(np.array([point]), np.array([1.0]), 0.0)
            point = float(l2_samples[0])
            l2_est = DensityEstimate(np.array([point]), np.array([1.0]), 0.0)
        methods[name] = MethodStats(
            count=len(pairs),
            kl_samples=kl_samples,
            l2_samples=l2_samples,
            kl_mean=float(kl_samples.mean()),
            kl_std=float(kl_samples.std()),
            l2_mean=float(l2_samples.mean()),
            l2_std=float(l2_samples.std()),
            kl_kde=kl_est,
            l2_kde=l2_est,
        )
    sharpest = min(methods, key=lambda name: methods[name].l2_mean)
    return StatsReport(
        methods=methods,
        sharpest_l2_method=sharpest,
        conventions={
            "histogram_bins": HISTOGRAM_BINS,
            "kl_channel_rule": "per-channel KL summed over channels",
            "kl_q_smoothing": Q_SMOOTHING,
            "l2_rule": "sum of squared pixel differences",
            "kde_bandwidth_rule": "silverman 1.06*sigma*n^(-1/5)",
        },
    )
