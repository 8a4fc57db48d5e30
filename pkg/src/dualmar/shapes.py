"""Random high-density object masks built from balls, octahedra and boxes.

Masks are boolean numpy arrays indexed ``(z, y, x)``.  Randomness comes from
``numpy.random.Generator`` over the PCG64 bit generator, so a seed fully
determines every mask.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import PlacementInfeasibleError


def make_rng(seed: int) -> np.random.Generator:
    """PCG64-backed generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class GenParams:
    max_volume_fraction: float = 0.10
    primitive_count_range: tuple[int, int] = (1, 25)
    primitive_max_size: int = 10
    outlier_count_max: int = 30
    outlier_size_range: tuple[int, int] = (1, 3)
    overlap_min: float = 0.95
    objects_per_scan_max: int = 10
    masks_per_scan: int = 30
    closing_radius: int = 2
    placement_attempts: int = 1000
    regenerate_retries: int = 3

    def __post_init__(self):
        lo, hi = self.primitive_count_range
        olo, ohi = self.outlier_size_range
        if not (0 < self.max_volume_fraction <= 1):
            raise ValueError("max_volume_fraction must be in (0, 1]")
        if not (0 < self.overlap_min <= 1):
            raise ValueError("overlap_min must be in (0, 1]")
        if lo > hi or lo < 0 or olo > ohi or olo < 1:
            raise ValueError("count/size ranges must be non-empty")
        if self.primitive_max_size < 1 or self.outlier_count_max < 0:
            raise ValueError("primitive_max_size must be >= 1 and outlier_count_max >= 0")
        if self.objects_per_scan_max < 1 or self.masks_per_scan < 1:
            raise ValueError("objects_per_scan_max and masks_per_scan must be >= 1")
        if self.closing_radius < 0:
            raise ValueError("closing_radius must be >= 0")


class Shape(str, enum.Enum):
    BALL = "ball"
    OCTAHEDRON = "octahedron"
    PARALLELEPIPED = "parallelepiped"


@dataclass(frozen=True)
class Primitive:
    """A solid at integer voxel ``center``.

    ``extent`` is the radius for balls, the L1 half-extent for octahedra and the
    ``(dz, dy, dx)`` side lengths for boxes.
    """

    shape: Shape
    center: tuple[int, int, int]
    extent: int | tuple[int, int, int]

    @property
    def linear_size(self) -> int:
        if self.shape is Shape.PARALLELEPIPED:
            return max(self.extent)
        return 2 * self.extent + 1


def rasterize_primitive(p: Primitive, dims) -> np.ndarray:
    """Voxels of ``p`` inside a ``dims`` grid; parts outside the grid are dropped."""
    grid = np.ogrid[tuple(slice(0, d) for d in dims)]
    offs = [g - c for g, c in zip(grid, p.center)]
    if p.shape is Shape.BALL:
        return sum(o * o for o in offs) <= p.extent * p.extent
    if p.shape is Shape.OCTAHEDRON:
        return sum(np.abs(o) for o in offs) <= p.extent
    inside = np.ones(tuple(dims), dtype=bool)
    for o, side in zip(offs, p.extent):
        lo = -(side // 2)
        inside = inside & (o >= lo) & (o < lo + side)
    return inside


def ball(radius: int, ndim: int = 3) -> np.ndarray:
    r = int(radius)
    grid = np.ogrid[tuple(slice(-r, r + 1) for _ in range(ndim))]
    return sum(g * g for g in grid) <= r * r


def morphological_close(m: np.ndarray, radius: int) -> np.ndarray:
    """Dilate then erode with a discrete ball; voxels beyond the grid count as empty."""
    m = np.asarray(m, dtype=bool)
    if radius <= 0:
        return m.copy()
    se = ball(radius, m.ndim)
    # padding keeps the dilation from being clipped at the border
    padded = np.pad(m, radius)
    closed = ndimage.binary_erosion(ndimage.binary_dilation(padded, se), se)
    return closed[tuple(slice(radius, radius + d) for d in m.shape)]


def _random_primitive(rng: np.random.Generator, lo_corner, shape_,
                      max_size: int, min_size: int = 1) -> Primitive:
    center = tuple(int(lo + rng.integers(0, n)) for lo, n in zip(lo_corner, shape_))
    kind = Shape(rng.choice([s.value for s in Shape]))
    if kind is Shape.PARALLELEPIPED:
        sides = tuple(int(v) for v in rng.integers(min_size, max_size + 1, size=3))
        return Primitive(kind, center, sides)
    # odd linear size 2r+1 within [min_size, max_size]
    r_lo = min_size // 2
    r_hi = max(r_lo, (max_size - 1) // 2)
    return Primitive(kind, center, int(rng.integers(r_lo, r_hi + 1)))


@dataclass
class GeneratedObject:
    """One object in a local frame; ``mask`` is cropped to its bounding box."""

    mask: np.ndarray
    z0: int
    range_shape: tuple[int, int, int]
    n_primitives: int
    n_outliers: int
    primitives: list[Primitive] = field(default_factory=list, repr=False)

    @property
    def voxels(self) -> int:
        return int(self.mask.sum())


def generate_object(rng: np.random.Generator, params: GenParams, dims) -> GeneratedObject:
    """Sample a volumetric range, fill it with closed primitives and add outliers.

    ``dims`` is the ``(z, y, x)`` scan shape; the range side lengths are drawn
    per axis from ``[0, max_volume_fraction * image side]`` and the z side is
    clipped to the scan depth.  An empty mask comes back when any side rounds
    to zero.
    """
    depth, side = dims[0], max(dims[1], dims[2])
    limit = params.max_volume_fraction * side
    extent = rng.uniform(0.0, limit, size=3)
    rshape = np.rint(extent).astype(int)
    rshape = np.minimum(rshape, [depth, dims[1], dims[2]])
    rshape = tuple(int(v) for v in rshape)

    lo, hi = params.primitive_count_range
    n_prims = int(rng.integers(lo, hi + 1))
    n_out = int(rng.integers(0, params.outlier_count_max + 1))
    if min(rshape) == 0:
        return GeneratedObject(np.zeros((0, 0, 0), dtype=bool), 0, rshape, n_prims, n_out)

    # local frame: range box padded so closing is never clipped
    pad = params.closing_radius
    local = tuple(s + 2 * pad for s in rshape)
    box = np.zeros(local, dtype=bool)
    box[tuple(slice(pad, pad + s) for s in rshape)] = True

    prims = []
    m = np.zeros(local, dtype=bool)
    for _ in range(n_prims):
        p = _random_primitive(rng, (pad,) * 3, rshape, params.primitive_max_size)
        prims.append(p)
        m |= rasterize_primitive(p, local) & box
    m = morphological_close(m, params.closing_radius)
    olo, ohi = params.outlier_size_range
    for _ in range(n_out):
        p = _random_primitive(rng, (pad,) * 3, rshape, ohi, olo)
        prims.append(p)
        m |= rasterize_primitive(p, local) & box

    z0 = int(rng.integers(0, depth - rshape[0] + 1)) - pad
    nz = np.argwhere(m)
    if nz.size == 0:
        return GeneratedObject(np.zeros((0, 0, 0), dtype=bool), 0, rshape, n_prims, n_out, prims)
    lo_c, hi_c = nz.min(axis=0), nz.max(axis=0) + 1
    cropped = m[tuple(slice(a, b) for a, b in zip(lo_c, hi_c))]
    return GeneratedObject(cropped, z0 + int(lo_c[0]), rshape, n_prims, n_out, prims)


@dataclass(frozen=True)
class Placement:
    z0: int
    y0: int
    x0: int
    overlap: float


def embed(obj_mask: np.ndarray, placement: Placement, dims) -> np.ndarray:
    out = np.zeros(dims, dtype=bool)
    dz, dy, dx = obj_mask.shape
    out[placement.z0:placement.z0 + dz, placement.y0:placement.y0 + dy,
        placement.x0:placement.x0 + dx] = obj_mask
    return out


def overlap_fraction(obj: GeneratedObject, brain: np.ndarray, y0: int, x0: int) -> float:
    dz, dy, dx = obj.mask.shape
    sub = brain[obj.z0:obj.z0 + dz, y0:y0 + dy, x0:x0 + dx]
    return float(np.count_nonzero(sub & obj.mask)) / obj.voxels


def place_object(obj: GeneratedObject, brain: np.ndarray, rng: np.random.Generator,
                 overlap_min: float = 0.95, attempts: int = 1000) -> Placement:
    """Rejection-sample an axial offset with ``|obj & brain| / |obj| >= overlap_min``."""
    brain = np.asarray(brain, dtype=bool)
    if not brain.any():
        raise ValueError("brain mask is empty")
    if obj.voxels == 0:
        raise ValueError("cannot place an empty object")
    dz, dy, dx = obj.mask.shape
    Z, Y, X = brain.shape
    if obj.z0 < 0 or obj.z0 + dz > Z or dy > Y or dx > X:
        raise PlacementInfeasibleError(f"object {obj.mask.shape} does not fit in {brain.shape}")
    for _ in range(attempts):
        y0 = int(rng.integers(0, Y - dy + 1))
        x0 = int(rng.integers(0, X - dx + 1))
        ov = overlap_fraction(obj, brain, y0, x0)
        if ov >= overlap_min:
            return Placement(obj.z0, y0, x0, ov)
    raise PlacementInfeasibleError(f"no placement with overlap >= {overlap_min} in {attempts} attempts")


@dataclass
class Scene:
    mask: np.ndarray
    objects: list[GeneratedObject]
    placements: list[Placement]


def _placed_object(rng, params, brain):
    # empty objects are resampled without counting against the retry budget
    last_err = None
    for _ in range(params.regenerate_retries + 1):
        obj = generate_object(rng, params, brain.shape)
        for _ in range(100):
            if obj.voxels:
                break
            obj = generate_object(rng, params, brain.shape)
        try:
            return obj, place_object(obj, brain, rng, params.overlap_min, params.placement_attempts)
        except PlacementInfeasibleError as err:
            last_err = err
    raise last_err


def generate_scene(rng: np.random.Generator, params: GenParams, brain: np.ndarray) -> Scene:
    """Union of 1..objects_per_scan_max independently generated and placed objects."""
    brain = np.asarray(brain, dtype=bool)
    if not brain.any():
        raise ValueError("brain mask is empty")
    k = int(rng.integers(1, params.objects_per_scan_max + 1))
    mask = np.zeros(brain.shape, dtype=bool)
    objects, placements = [], []
    for _ in range(k):
        obj, pl = _placed_object(rng, params, brain)
        mask |= embed(obj.mask, pl, brain.shape)
        objects.append(obj)
        placements.append(pl)
    return Scene(mask, objects, placements)


def generate_mask_set(rng: np.random.Generator, params: GenParams, brain: np.ndarray) -> list[Scene]:
    return [generate_scene(rng, params, brain) for _ in range(params.masks_per_scan)]
