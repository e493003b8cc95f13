"""Full-reference image-quality metrics and perturbation norms.

All metrics take (reference, comparison) float images in [0, 255], compute
per channel and average. Window sizes and stabilizing constants follow the
metrics' original definitions and are exposed as keyword arguments; the
values in METRIC_CONFIG are echoed into CLI reports.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, InputError

# PSNR is made finite and sortable: MSE below PSNR_MSE_FLOOR (in particular
# identical images) reports the cap. The cap value equals 10*log10(2**64).
PSNR_CAP = 192.66
PSNR_MSE_FLOOR = 1e-15

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
UQI_WINDOW = 8
SCC_WINDOW = 8
VIFP_SCALES = 4
VIFP_SIGMA_NSQ = 2.0

SCC_HIGHPASS = np.array([[-1.0, -1.0, -1.0],
                         [-1.0, 8.0, -1.0],
                         [-1.0, -1.0, -1.0]])

METRIC_CONFIG = {
    "psnr_cap": PSNR_CAP,
    "psnr_mse_floor": PSNR_MSE_FLOOR,
    "ssim_window": SSIM_WINDOW,
    "ssim_sigma": SSIM_SIGMA,
    "ssim_k1": SSIM_K1,
    "ssim_k2": SSIM_K2,
    "uqi_window": UQI_WINDOW,
    "scc_window": SCC_WINDOW,
    "vifp_scales": VIFP_SCALES,
    "vifp_sigma_nsq": VIFP_SIGMA_NSQ,
}


@dataclass(frozen=True)
class QualityReport:
    psnr: float
    ssim: float
    uqi: float
    scc: float
    vifp: float
    l1: float
    l2: float
    linf: float


class LpDistances(NamedTuple):
    l1: float
    l2: float
    linf: float


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if a.ndim != 3:
        raise DimensionError(f"expected (H,W,C) images, got shape {a.shape}")
    return a, b


def psnr(a, b) -> float:
    """10*log10(255^2 / MSE) in dB, capped at PSNR_CAP for vanishing MSE."""
    a, b = _pair(a, b)
    mse = float(np.mean(np.square(a - b)))
    if mse <= PSNR_MSE_FLOOR:
        return PSNR_CAP
    return min(10.0 * np.log10(255.0 ** 2 / mse), PSNR_CAP)


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(x2d: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Correlate with ``window`` keeping only fully covered positions."""
    n = window.shape[0]
    wins = sliding_window_view(x2d, (n, n))
    return np.tensordot(wins, window, axes=([2, 3], [0, 1]))


def ssim(a, b, window=SSIM_WINDOW, sigma=SSIM_SIGMA, k1=SSIM_K1, k2=SSIM_K2) -> float:
    """Mean local structural similarity with a Gaussian window, per channel."""
    a, b = _pair(a, b)
    if min(a.shape[0], a.shape[1]) < window:
        raise InputError(f"image {a.shape[0]}x{a.shape[1]} smaller than the {window}-pixel window")
    win = gaussian_window(window, sigma)
    c1 = (k1 * 255.0) ** 2
    c2 = (k2 * 255.0) ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mu1 = _filter_valid(x, win)
        mu2 = _filter_valid(y, win)
        s1 = _filter_valid(x * x, win) - mu1 * mu1
        s2 = _filter_valid(y * y, win) - mu2 * mu2
        s12 = _filter_valid(x * y, win) - mu1 * mu2
        smap = ((2 * mu1 * mu2 + c1) * (2 * s12 + c2)) / \
               ((mu1 * mu1 + mu2 * mu2 + c1) * (s1 + s2 + c2))
        vals.append(smap.mean())
    return float(np.mean(vals))


def _windowed_stats(x, y, size):
    """Uniform-window means, variances and covariance plus an equality mask."""
    wx = sliding_window_view(x, (size, size))
    wy = sliding_window_view(y, (size, size))
    m1 = wx.mean(axis=(2, 3))
    m2 = wy.mean(axis=(2, 3))
    v1 = (wx * wx).mean(axis=(2, 3)) - m1 * m1
    v2 = (wy * wy).mean(axis=(2, 3)) - m2 * m2
    cov = (wx * wy).mean(axis=(2, 3)) - m1 * m2
    equal = np.abs(wx - wy).max(axis=(2, 3)) == 0.0
    return m1, m2, v1, v2, cov, equal


def uqi(a, b, window=UQI_WINDOW) -> float:
    """Universal quality index: structural similarity with no stabilizers,
    over uniform sliding windows. Windows where the formula degenerates to
    0/0 contribute 1 when the patches are identical and 0 otherwise."""
    a, b = _pair(a, b)
    if min(a.shape[0], a.shape[1]) < window:
        raise InputError(f"image {a.shape[0]}x{a.shape[1]} smaller than the {window}-pixel window")
    vals = []
    for ch in range(a.shape[2]):
        m1, m2, v1, v2, cov, equal = _windowed_stats(a[:, :, ch], b[:, :, ch], window)
        num = 4.0 * cov * m1 * m2
        den = (v1 + v2) * (m1 * m1 + m2 * m2)
        degenerate = den == 0.0
        q = np.where(degenerate, np.where(equal, 1.0, 0.0),
                     num / np.where(degenerate, 1.0, den))
        vals.append(q.mean())
    return float(np.mean(vals))


def scc(a, b, window=SCC_WINDOW) -> float:
    """Mean windowed correlation coefficient of high-pass filtered images.

    Both inputs are Laplacian-filtered (valid region), then correlated over
    uniform sliding windows; degenerate flat windows contribute 1 if equal,
    0 otherwise."""
    a, b = _pair(a, b)
    hp_size = SCC_HIGHPASS.shape[0]
    if min(a.shape[0], a.shape[1]) < hp_size + window - 1:
        raise InputError(f"image too small for {hp_size}-pixel high-pass plus "
                         f"{window}-pixel windows")
    vals = []
    for ch in range(a.shape[2]):
        x = _filter_valid(a[:, :, ch], SCC_HIGHPASS)
        y = _filter_valid(b[:, :, ch], SCC_HIGHPASS)
        _, _, v1, v2, cov, equal = _windowed_stats(x, y, window)
        den = np.sqrt(np.maximum(v1, 0.0)) * np.sqrt(np.maximum(v2, 0.0))
        degenerate = den == 0.0
        r = np.where(degenerate, np.where(equal, 1.0, 0.0),
                     cov / np.where(degenerate, 1.0, den))
        vals.append(r.mean())
    return float(np.mean(vals))


def _vifp_channel(ref, dist, scales, sigma_nsq):
    eps = 1e-10
    num = 0.0
    den = 0.0
    g1, g2 = ref, dist
    for scale in range(1, scales + 1):
        n = 2 ** (scales - scale + 1) + 1
        win = gaussian_window(n, n / 5.0)
        if scale > 1:
            if min(g1.shape) < n:
                break
            g1 = _filter_valid(g1, win)[::2, ::2]
            g2 = _filter_valid(g2, win)[::2, ::2]
        if min(g1.shape) < n:
            break  # image exhausted; remaining scales carry no windows
        mu1 = _filter_valid(g1, win)
        mu2 = _filter_valid(g2, win)
        s1 = np.maximum(_filter_valid(g1 * g1, win) - mu1 * mu1, 0.0)
        s2 = np.maximum(_filter_valid(g2 * g2, win) - mu2 * mu2, 0.0)
        s12 = _filter_valid(g1 * g2, win) - mu1 * mu2

        g = s12 / (s1 + eps)
        sv = s2 - g * s12
        g[s1 < eps] = 0.0
        sv[s1 < eps] = s2[s1 < eps]
        s1 = s1.copy()
        s1[s1 < eps] = 0.0
        g[s2 < eps] = 0.0
        sv[s2 < eps] = 0.0
        sv[g < 0.0] = s2[g < 0.0]
        g[g < 0.0] = 0.0
        sv[sv <= eps] = eps

        num += np.log10(1.0 + g * g * s1 / (sv + sigma_nsq)).sum()
        den += np.log10(1.0 + s1 / sigma_nsq).sum()
    return num, den


def vifp(a, b, scales=VIFP_SCALES, sigma_nsq=VIFP_SIGMA_NSQ) -> float:
    """Pixel-domain visual information fidelity, reference image first.

    Scales whose Gaussian window no longer fits the downsampled image are
    skipped; a reference with no usable variation anywhere yields 1 for an
    identical comparison image and 0 otherwise."""
    a, b = _pair(a, b)
    num = 0.0
    den = 0.0
    for ch in range(a.shape[2]):
        n, d = _vifp_channel(a[:, :, ch], b[:, :, ch], scales, sigma_nsq)
        num += n
        den += d
    if den == 0.0:
        return 1.0 if np.array_equal(a, b) else 0.0
    return float(num / den)


def lp_distances(a, b) -> LpDistances:
    """Raw-pixel L1, L2 and Linf norms of the difference image."""
    a, b = _pair(a, b)
    d = (a - b).ravel()
    return LpDistances(
        l1=float(np.abs(d).sum()),
        l2=float(np.sqrt(np.square(d).sum())),
        linf=float(np.abs(d).max()) if d.size else 0.0,
    )


def quality_report(original, adversarial) -> QualityReport:
    """All five quality metrics plus perturbation norms for one image pair."""
    lp = lp_distances(original, adversarial)
    return QualityReport(
        psnr=psnr(original, adversarial),
        ssim=ssim(original, adversarial),
        uqi=uqi(original, adversarial),
        scc=scc(original, adversarial),
        vifp=vifp(original, adversarial),
        l1=lp.l1, l2=lp.l2, linf=lp.linf,
    )
