"""Synthetic head phantoms that stand in for artifact-free clinical scans.

Volumes are ``(n_slices, size, size)`` float arrays in HU (slice, row, column)
and masks are boolean arrays of the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

HU_MIN, HU_MAX = -1024.0, 3071.0
AIR_HU = -1000.0


@dataclass
class PhantomParams:
    skull_hu: tuple[float, float] = (700.0, 1200.0)
    brain_hu: tuple[float, float] = (20.0, 60.0)
    brain_base_hu: tuple[float, float] = (28.0, 40.0)
    ventricle_hu: tuple[float, float] = (0.0, 15.0)
    bump_count: tuple[int, int] = (3, 8)
    bump_amplitude: float = 30.0
    ventricle_count: tuple[int, int] = (1, 3)
    # edge softness in pixels (logistic width); keeps FBP round trips well behaved
    edge_width: float = 1.0


@dataclass
class HeadPhantom:
    volume: np.ndarray
    brain_mask: np.ndarray
    skull_mask: np.ndarray = field(repr=False)
    seed: int | None = None

    @property
    def n_slices(self) -> int:
        return self.volume.shape[0]

    @property
    def size(self) -> int:
        return self.volume.shape[1]


def _soft_inside(r: np.ndarray, scale: float, width: float) -> np.ndarray:
    """~1 inside the unit level set ``r <= 1``, ~0 outside, ``width`` pixels of blur."""
    # r is a normalised ellipse radius; convert the level-set distance to pixels
    dist = (1.0 - r) * scale
    return 1.0 / (1.0 + np.exp(-np.clip(dist / width, -40, 40)))


def _ellipse_radius(xx, yy, cx, cy, a, b, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return np.sqrt((u / a) ** 2 + (v / b) ** 2)


def generate_head_phantom(rng: np.random.Generator, size: int, n_slices: int,
                          params: PhantomParams | None = None) -> HeadPhantom:
    if size < 64:
        raise ConfigurationError(f"phantom size must be >= 64, got {size}")
    if n_slices < 1:
        raise ConfigurationError("n_slices must be >= 1")
    p = params or PhantomParams()

    c = (size - 1) / 2.0
    yy, xx = np.mgrid[:size, :size].astype(np.float64)

    # head ellipsoid; everything scaled to the inscribed reconstruction circle
    outer_a = rng.uniform(0.36, 0.41) * size
    outer_b = rng.uniform(0.41, 0.45) * size
    thickness = rng.uniform(0.045, 0.06) * size
    tilt = rng.uniform(-0.15, 0.15)
    shift = rng.uniform(-0.02, 0.02, size=2) * size
    skull_hu = rng.uniform(*p.skull_hu)
    base_hu = rng.uniform(*p.brain_base_hu)

    n_bumps = rng.integers(p.bump_count[0], p.bump_count[1] + 1)
    bumps = [
        (rng.uniform(-0.6, 0.6, size=2), rng.uniform(0.08, 0.25),
         rng.uniform(-p.bump_amplitude, p.bump_amplitude), rng.uniform(-1, 1))
        for _ in range(n_bumps)
    ]
    n_vent = rng.integers(p.ventricle_count[0], p.ventricle_count[1] + 1)
    vents = [
        (rng.uniform(-0.35, 0.35, size=2), rng.uniform(0.06, 0.14), rng.uniform(0.1, 0.3),
         rng.uniform(0, np.pi), rng.uniform(*p.ventricle_hu))
        for _ in range(n_vent)
    ]

    volume = np.empty((n_slices, size, size))
    brain = np.zeros((n_slices, size, size), dtype=bool)
    skull = np.zeros((n_slices, size, size), dtype=bool)
    zs = np.linspace(-0.5, 0.5, n_slices) if n_slices > 1 else np.zeros(1)
    for k, z in enumerate(zs):
        scale = np.sqrt(1.0 - 0.6 * z * z)
        a, b = outer_a * scale, outer_b * scale
        cx, cy = c + shift[0], c + shift[1]
        theta = tilt + 0.05 * z
        r_out = _ellipse_radius(xx, yy, cx, cy, a, b, theta)
        r_in = _ellipse_radius(xx, yy, cx, cy, a - thickness, b - thickness, theta)
        head = _soft_inside(r_out, min(a, b), p.edge_width)
        inner = _soft_inside(r_in, min(a, b) - thickness, p.edge_width)

        ia, ib = a - thickness, b - thickness
        tissue = np.full((size, size), base_hu)
        for (mu, width, amp, dz) in bumps:
            bx, by = cx + mu[0] * ia, cy + mu[1] * ib
            sig = width * min(ia, ib)
            zfac = np.exp(-((z - 0.5 * dz) ** 2) / 0.5)
            tissue += amp * zfac * np.exp(-((xx - bx) ** 2 + (yy - by) ** 2) / (2 * sig * sig))
        tissue = np.clip(tissue, *p.brain_hu)
        for (mu, va, vb, vt, vhu) in vents:
            vscale = max(0.0, 1.0 - 2.0 * z * z)
            if vscale <= 0.2:
                continue
            r_v = _ellipse_radius(xx, yy, cx + mu[0] * ia, cy + mu[1] * ib,
                                  va * ia * vscale, vb * ib * vscale, vt)
            w = _soft_inside(r_v, va * ia * vscale, p.edge_width)
            tissue = tissue * (1 - w) + vhu * w

        img = AIR_HU * (1 - head) + skull_hu * (head - inner) + tissue * inner
        volume[k] = np.clip(img, HU_MIN, HU_MAX)
        # brain: comfortably inside the inner table; skull: any visible bone
        brain[k] = r_in <= 1.0 - 1.5 / max(min(ia, ib), 1.0)
        skull[k] = (head - inner) > 0.05
    brain &= ~skull
    return HeadPhantom(volume, brain, skull)


def split_dataset(phantoms, fractions=(0.4, 0.4, 0.2), seed: int = 0):
    """Phantom-wise split into (inpainter train, refiner train, test) lists."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if len(fractions) != 3 or np.any(fractions < 0) or not np.isclose(fractions.sum(), 1.0):
        raise ConfigurationError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    items = list(phantoms)
    if len(items) < 3:
        raise ConfigurationError(f"need at least 3 phantoms to split, got {len(items)}")
    order = np.random.default_rng(seed).permutation(len(items))
    counts = np.floor(fractions * len(items)).astype(int)
    # hand leftovers to the largest remainders so counts sum to the input size
    rem = fractions * len(items) - counts
    for i in np.argsort(-rem, kind="stable")[: len(items) - counts.sum()]:
        counts[i] += 1
    if np.any(counts == 0):
        raise ConfigurationError(f"split {fractions} leaves an empty part for {len(items)} phantoms")
    bounds = np.cumsum(counts)
    parts = np.split(order, bounds[:-1])
    return tuple([items[i] for i in part] for part in parts)
