"""Parallel-beam Radon transform and filtered back-projection.

Images are square ``(size, size)`` float arrays in HU; sinograms are
``(n_angles, n_bins)`` arrays of line integrals (HU x length).  Pixel ``(i, j)``
sits at ``x = (j - c) * pixel_spacing``, ``y = (i - c) * pixel_spacing`` with
``c = (size - 1) / 2``; detector bin ``k`` measures the ray at signed offset
``s = (k - (n_bins - 1) / 2) * bin_spacing`` along ``(cos a, sin a)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from .errors import ConfigurationError

# radon samples per pixel of ray length
_STEPS_PER_PIXEL = 2
_ANGLE_CHUNK = 8


class FilterKind(str, enum.Enum):
    RAM_LAK = "ramlak"
    RAM_LAK_HANN = "ramlak-hann"


@dataclass(frozen=True)
class ProjectionGeometry:
    n_angles: int
    n_bins: int
    bin_spacing: float = 1.0
    pixel_spacing: float = 1.0

    def __post_init__(self):
        if self.n_angles < 1:
            raise ConfigurationError(f"n_angles must be >= 1, got {self.n_angles}")
        if self.n_bins < 1:
            raise ConfigurationError(f"n_bins must be >= 1, got {self.n_bins}")
        if self.bin_spacing <= 0 or self.pixel_spacing <= 0:
            raise ConfigurationError("spacings must be positive")

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_angles) * (math.pi / self.n_angles)

    @property
    def bin_centers(self) -> np.ndarray:
        return (np.arange(self.n_bins) - (self.n_bins - 1) / 2.0) * self.bin_spacing

    def check_image_size(self, size: int) -> None:
        """Raise unless every ray through a ``size`` image lands on the detector."""
        diag = size * math.sqrt(2.0) * self.pixel_spacing
        if self.n_bins * self.bin_spacing < diag:
            raise ConfigurationError(
                f"{self.n_bins} bins of {self.bin_spacing} do not cover the "
                f"{size}x{size} image diagonal ({diag:.2f})"
            )

    @classmethod
    def for_image(cls, size: int, n_angles: int, pixel_spacing: float = 1.0):
        """Default geometry: odd, centred detector of ``ceil(size * sqrt 2) + 1`` bins."""
        n_bins = math.ceil(size * math.sqrt(2.0)) + 1
        if n_bins % 2 == 0:
            n_bins += 1
        return cls(n_angles, n_bins, pixel_spacing, pixel_spacing)


def _check_image(img: np.ndarray) -> int:
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise ConfigurationError(f"expected a square 2D image, got shape {img.shape}")
    if img.shape[0] < 16:
        raise ConfigurationError(f"image size must be >= 16, got {img.shape[0]}")
    return img.shape[0]


def _check_sinogram(sino: np.ndarray, geom: ProjectionGeometry) -> None:
    if sino.shape != (geom.n_angles, geom.n_bins):
        raise ConfigurationError(
            f"sinogram shape {sino.shape} does not match geometry "
            f"({geom.n_angles}, {geom.n_bins})"
        )


@lru_cache(maxsize=4)
def _radon_operator(size: int, geom: ProjectionGeometry) -> sparse.csr_matrix:
    """Sparse ``(n_angles * n_bins, size * size)`` matrix of bilinear ray weights."""
    c = (size - 1) / 2.0
    # ray parameter in pixel units; only the stretch crossing the image matters
    half = size / math.sqrt(2.0) + 1.0
    n_t = int(math.ceil(2 * half * _STEPS_PER_PIXEL)) + 1
    t = np.linspace(-half, half, n_t)
    dt = (t[1] - t[0]) * geom.pixel_spacing
    s = geom.bin_centers / geom.pixel_spacing
    n_rays = geom.n_angles * geom.n_bins

    blocks = []
    angles = geom.angles
    for start in range(0, geom.n_angles, _ANGLE_CHUNK):
        a = angles[start:start + _ANGLE_CHUNK]
        cos, sin = np.cos(a)[:, None, None], np.sin(a)[:, None, None]
        col = (s[None, :, None] * cos - t[None, None, :] * sin + c).ravel()
        row = (s[None, :, None] * sin + t[None, None, :] * cos + c).ravel()
        ray = np.broadcast_to(
            np.arange(len(a) * geom.n_bins).reshape(len(a), geom.n_bins, 1),
            (len(a), geom.n_bins, n_t),
        ).ravel()
        i0, j0 = np.floor(row).astype(np.int64), np.floor(col).astype(np.int64)
        fr, fc = row - i0, col - j0
        rays, pix, wts = [], [], []
        for di, dj, w in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                          (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
            ii, jj = i0 + di, j0 + dj
            ok = (ii >= 0) & (ii < size) & (jj >= 0) & (jj < size) & (w > 0)
            rays.append(ray[ok])
            pix.append(ii[ok] * size + jj[ok])
            wts.append(w[ok] * dt)
        block = sparse.coo_matrix(
            (np.concatenate(wts), (np.concatenate(rays), np.concatenate(pix))),
            shape=(len(a) * geom.n_bins, size * size),
        ).tocsr()
        blocks.append(block)
    op = sparse.vstack(blocks, format="csr")
    assert op.shape == (n_rays, size * size)
    return op


def radon(img: np.ndarray, geom: ProjectionGeometry) -> np.ndarray:
    """Line integrals of ``img`` sampled every half pixel with bilinear interpolation.

    Pixels outside the grid contribute zero.  A leading batch axis is allowed:
    ``(..., size, size) -> (..., n_angles, n_bins)``.
    """
    img = np.asarray(img, dtype=np.float64)
    size = _check_image(img[(0,) * (img.ndim - 2)] if img.ndim > 2 else img)
    geom.check_image_size(size)
    op = _radon_operator(size, geom)
    batch = img.shape[:-2]
    flat = img.reshape(-1, size * size)
    out = (op @ flat.T).T
    return out.reshape(batch + (geom.n_angles, geom.n_bins))


def backproject(sino: np.ndarray, geom: ProjectionGeometry, size: int) -> np.ndarray:
    """Unfiltered backprojection scaled by ``pi / n_angles``."""
    _check_sinogram(sino, geom)
    geom.check_image_size(size)
    sino = np.asarray(sino, dtype=np.float64)
    c = (size - 1) / 2.0
    coord = (np.arange(size) - c) * geom.pixel_spacing
    x = coord[None, :]
    y = coord[:, None]
    centre = (geom.n_bins - 1) / 2.0
    bins = np.arange(geom.n_bins, dtype=np.float64)

    img = np.zeros((size, size))
    for a, row in zip(geom.angles, sino):
        u = (x * math.cos(a) + y * math.sin(a)) / geom.bin_spacing + centre
        img += np.interp(u.ravel(), bins, row, left=0.0, right=0.0).reshape(size, size)
    return img * (math.pi / geom.n_angles)


def ramlak_kernel(n_bins: int, tau: float = 1.0) -> np.ndarray:
    """Discrete Ram-Lak kernel on offsets ``-(n_bins-1) .. n_bins-1``."""
    k = np.arange(-(n_bins - 1), n_bins)
    h = np.zeros(k.shape)
    h[k == 0] = 1.0 / (4.0 * tau * tau)
    odd = k % 2 == 1
    h[odd] = -1.0 / (math.pi * k[odd] * tau) ** 2
    return h


def filter_kernel(n_bins: int, tau: float, kind: FilterKind) -> np.ndarray:
    h = ramlak_kernel(n_bins, tau)
    if FilterKind(kind) is FilterKind.RAM_LAK_HANN:
        # Hann window 0.5 + 0.5 cos(2 pi f tau) == spatial taps (1/4, 1/2, 1/4)
        padded = np.pad(h, 1)
        h = 0.25 * padded[:-2] + 0.5 * padded[1:-1] + 0.25 * padded[2:]
    return h


@lru_cache(maxsize=16)
def _filter_matrix(n_bins: int, tau: float, kind: FilterKind) -> np.ndarray:
    h = filter_kernel(n_bins, tau, kind)
    idx = np.arange(n_bins)
    # out[n] = tau * sum_m h[n - m] in[m]
    mat = tau * h[(idx[:, None] - idx[None, :]) + n_bins - 1]
    mat.setflags(write=False)
    return mat


def fbp_filter(sino: np.ndarray, kind: FilterKind = FilterKind.RAM_LAK,
               bin_spacing: float = 1.0) -> np.ndarray:
    """Convolve every detector row with the (optionally Hann-windowed) ramp kernel."""
    sino = np.asarray(sino, dtype=np.float64)
    mat = _filter_matrix(sino.shape[-1], float(bin_spacing), FilterKind(kind))
    return sino @ mat.T


def iradon_fbp(sino: np.ndarray, geom: ProjectionGeometry, size: int,
               kind: FilterKind = FilterKind.RAM_LAK) -> np.ndarray:
    _check_sinogram(sino, geom)
    return backproject(fbp_filter(sino, kind, geom.bin_spacing), geom, size)


def reconstruction_circle(size: int) -> np.ndarray:
    """Boolean mask of the circle inscribed in a ``size`` x ``size`` grid."""
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[:size, :size]
    return (xx - c) ** 2 + (yy - c) ** 2 <= (size / 2.0) ** 2
