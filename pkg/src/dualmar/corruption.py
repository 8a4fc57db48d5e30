"""Metal detection, metal-trace masks, sinogram hole cutting and metal reinsertion."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError
from .tomo import ProjectionGeometry, radon

DEFAULT_METAL_THRESHOLD = 2500.0
METAL_HU = 3071.0
TRACE_EPS = 1e-6


def _same_shape(a, b, what):
    if np.shape(a) != np.shape(b):
        raise ConfigurationError(f"{what}: shape {np.shape(a)} != {np.shape(b)}")


def detect_metal(img: np.ndarray, threshold: float = DEFAULT_METAL_THRESHOLD) -> np.ndarray:
    if not np.isfinite(threshold):
        raise ConfigurationError("metal threshold must be finite")
    return np.asarray(img) >= threshold


def metal_trace(mask: np.ndarray, geom: ProjectionGeometry, dilate: int = 1) -> np.ndarray:
    """Sinogram bins whose rays touch the mask, widened by ``dilate`` bins on each side."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros((geom.n_angles, geom.n_bins), dtype=bool)
    trace = radon(mask.astype(np.float64), geom) > TRACE_EPS
    if dilate > 0:
        trace = ndimage.binary_dilation(trace, np.ones((1, 2 * dilate + 1), dtype=bool))
    return trace


def cut_trace(sino: np.ndarray, trace: np.ndarray):
    """Zero the traced bins; returns ``(cut, valid)`` with ``valid = ~trace``."""
    _same_shape(sino, trace, "cut_trace")
    trace = np.asarray(trace, dtype=bool)
    return np.where(trace, 0.0, sino), ~trace


def reinsert_metal(restored: np.ndarray, original: np.ndarray, mask: np.ndarray) -> np.ndarray:
    _same_shape(restored, original, "reinsert_metal")
    _same_shape(restored, mask, "reinsert_metal")
    return np.where(np.asarray(mask, dtype=bool), original, restored)


def insert_metal(img: np.ndarray, mask: np.ndarray, value: float = METAL_HU) -> np.ndarray:
    """Paste a high-density object into a clean slice (used to build corrupted inputs)."""
    _same_shape(img, mask, "insert_metal")
    return np.where(np.asarray(mask, dtype=bool), value, img)
