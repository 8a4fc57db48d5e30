"""Image-quality metrics in HU and relative improvement over a baseline."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _roi(a, b, roi):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch {a.shape} vs {b.shape}")
    if roi is None:
        return a.ravel(), b.ravel()
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != a.shape:
        raise ConfigurationError(f"roi shape {roi.shape} != image shape {a.shape}")
    if not roi.any():
        raise ConfigurationError("empty region of interest")
    return a[roi], b[roi]


def mae(a, b, roi=None) -> float:
    a, b = _roi(a, b, roi)
    return float(np.mean(np.abs(a - b)))


def mse(a, b, roi=None) -> float:
    a, b = _roi(a, b, roi)
    d = a - b
    return float(np.mean(d * d))


def gaussian_taps(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def _filter(img, taps):
    """Separable Gaussian average at every window position fully inside the image."""
    h = len(taps) // 2
    out = ndimage.correlate1d(img, taps, axis=0, mode="constant")
    out = ndimage.correlate1d(out, taps, axis=1, mode="constant")
    return out[h:-h, h:-h]


def ssim(a, b, dynamic_range: float) -> float:
    """Mean SSIM over all valid 11x11 Gaussian-window positions."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch {a.shape} vs {b.shape}")
    if dynamic_range <= 0:
        raise ConfigurationError("dynamic_range must be positive")
    if min(a.shape) < SSIM_WINDOW:
        raise ConfigurationError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    if np.array_equal(a, b):
        return 1.0
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    win = gaussian_taps()
    # centre the data so the variance terms do not cancel catastrophically
    shift = 0.5 * (a.mean() + b.mean())
    a0, b0 = a - shift, b - shift
    mu_a, mu_b = _filter(a0, win), _filter(b0, win)
    var_a = np.maximum(_filter(a0 * a0, win) - mu_a ** 2, 0.0)
    var_b = np.maximum(_filter(b0 * b0, win) - mu_b ** 2, 0.0)
    cov = _filter(a0 * b0, win) - mu_a * mu_b
    mu_a, mu_b = mu_a + shift, mu_b + shift
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def relative_mse_drop(method_mse: float, baseline_mse: float) -> float:
    """Percent change of MSE relative to the baseline (negative means better)."""
    if not baseline_mse > 0:
        raise ConfigurationError("baseline MSE must be positive")
    return 100.0 * (method_mse - baseline_mse) / baseline_mse
