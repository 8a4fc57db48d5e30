"""Slice-by-slice MAR inference, training-pair construction, training and evaluation.

The networks see normalised data: images are mapped from the HU window to
``[0, 1]`` and sinograms are line integrals of normalised images divided by the
image diagonal, which keeps them in ``[0, 1]`` as well.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import corruption, metrics
from .errors import ConfigurationError, TrainingDivergedError
from .limar import degenerate_rows, limar_inpaint
from .models import PUNet, UNet, UNetConfig, linear_fill, punet_forward, unet_forward
from .nn.ops import l1_loss_weighted
from .nn.optim import AdamState, LrSchedule, adam_step, lr_at_epoch
from .tomo import FilterKind, ProjectionGeometry, iradon_fbp, radon

log = logging.getLogger(__name__)

VARIANTS = ("full", "inpaint_only", "image_only", "limar")
# uncorrected FBP of the corrupted slice; the floor every method should beat
NO_MAR = "none"


@dataclass(frozen=True)
class Window:
    lo: float = -1024.0
    hi: float = 3071.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigurationError(f"window min {self.lo} must be below max {self.hi}")

    @property
    def width(self) -> float:
        return self.hi - self.lo


def normalize_hu(img, window: Window = Window()):
    return np.clip((np.asarray(img, dtype=np.float64) - window.lo) / window.width, 0.0, 1.0)


def denormalize(t, window: Window = Window()):
    return np.asarray(t, dtype=np.float64) * window.width + window.lo


def sinogram_scale(size: int, geom: ProjectionGeometry) -> float:
    """Longest possible line integral of a ``[0, 1]`` image: the diagonal length."""
    return size * math.sqrt(2.0) * geom.pixel_spacing


def project(img_hu, geom: ProjectionGeometry, window: Window = Window()):
    """Normalised sinogram of one or more HU slices."""
    size = np.shape(img_hu)[-1]
    return radon(normalize_hu(img_hu, window), geom) / sinogram_scale(size, geom)


def reconstruct(sino_norm, geom: ProjectionGeometry, size: int,
                kind: FilterKind = FilterKind.RAM_LAK):
    """Normalised image from a normalised sinogram."""
    return iradon_fbp(np.asarray(sino_norm) * sinogram_scale(size, geom), geom, size, kind)


# -- inference ---------------------------------------------------------------

Inpainter = Callable[[np.ndarray, np.ndarray], np.ndarray]
Refiner = Callable[[np.ndarray], np.ndarray]


def inpainter_from(net: PUNet) -> Inpainter:
    def run(sino, valid):
        return punet_forward(net, sino[None, None].astype(net.dtype), valid[None, None])[0, 0]
    return run


def refiner_from(net: UNet) -> Refiner:
    def run(img):
        return unet_forward(net, img[None, None].astype(net.dtype))[0, 0]
    return run


@dataclass
class PipelineConfig:
    geometry: ProjectionGeometry
    window: Window = Window()
    metal_threshold: float = corruption.DEFAULT_METAL_THRESHOLD
    variant: str = "full"
    filter: FilterKind = FilterKind.RAM_LAK

    def __post_init__(self):
        if self.variant not in VARIANTS + (NO_MAR,):
            raise ConfigurationError(f"unknown variant {self.variant!r}")


@dataclass
class InferResult:
    image: np.ndarray
    noop: bool = False
    degenerate_rows: int = 0
    metal_mask: np.ndarray | None = None


def mar_infer(img, cfg: PipelineConfig, inpainter: Inpainter | None = None,
              refiner: Refiner | None = None, image_refiner: Refiner | None = None) -> InferResult:
    """Run the seven-step correction on one HU slice.

    ``inpainter`` and ``refiner`` are needed by the variants that use them;
    ``image_refiner`` is the separately trained image-to-image model.
    """
    img = np.asarray(img, dtype=np.float64)
    size = img.shape[0]
    v = cfg.variant
    mask = corruption.detect_metal(img, cfg.metal_threshold)
    if not mask.any():
        return InferResult(img.copy(), noop=True, metal_mask=mask)

    sino = project(img, cfg.geometry, cfg.window)
    n_bad = 0
    if v in ("image_only", NO_MAR):
        recon = reconstruct(sino, cfg.geometry, size, cfg.filter)
        if v == "image_only":
            if image_refiner is None:
                raise ConfigurationError("image_only variant needs an image refiner")
            recon = image_refiner(recon)
    else:
        trace = corruption.metal_trace(mask, cfg.geometry)
        cut, valid = corruption.cut_trace(sino, trace)
        if v == "limar":
            n_bad = int(degenerate_rows(trace).sum())
            filled = limar_inpaint(cut, trace)
        else:
            if inpainter is None:
                raise ConfigurationError(f"{v} variant needs an inpainter")
            filled = inpainter(cut, valid)
        recon = reconstruct(filled, cfg.geometry, size, cfg.filter)
        if v == "full":
            if refiner is None:
                raise ConfigurationError("full variant needs a refiner")
            recon = refiner(recon)
    restored = denormalize(recon, cfg.window)
    return InferResult(corruption.reinsert_metal(restored, img, mask),
                       degenerate_rows=n_bad, metal_mask=mask)


# -- training data -----------------------------------------------------------

@dataclass
class InpaintPairs:
    """Stacked ``(n, A, B)`` arrays plus the (phantom, mask, slice) of each pair."""

    inputs: np.ndarray
    valid: np.ndarray
    targets: np.ndarray
    metal: np.ndarray
    clean: np.ndarray
    index: list[tuple[int, int, int]] = field(default_factory=list)

    def __len__(self):
        return len(self.index)


def build_training_pairs(volume, masks: Sequence[np.ndarray], geom: ProjectionGeometry,
                         window: Window = Window(), phantom_id: int = 0,
                         max_pairs: int | None = None, rng: np.random.Generator | None = None) -> InpaintPairs:
    """Cut-sinogram inpainting pairs for every slice whose mask is nonempty.

    ``max_pairs`` keeps a random subset (drawn with ``rng``) of the candidates.
    """
    volume = np.asarray(volume)
    size = volume.shape[-1]
    cand = [(mi, k) for mi, m in enumerate(masks) for k in range(volume.shape[0]) if m[k].any()]
    if max_pairs is not None and len(cand) > max_pairs:
        pick = (rng or np.random.default_rng(0)).choice(len(cand), size=max_pairs, replace=False)
        cand = [cand[i] for i in sorted(pick)]
    n_a, n_b = geom.n_angles, geom.n_bins
    out = InpaintPairs(np.empty((len(cand), n_a, n_b)), np.empty((len(cand), n_a, n_b), dtype=bool),
                       np.empty((len(cand), n_a, n_b)), np.empty((len(cand), size, size), dtype=bool),
                       np.empty((len(cand), size, size)))
    clean_sino = {}
    for i, (mi, k) in enumerate(cand):
        if k not in clean_sino:
            clean_sino[k] = project(volume[k], geom, window)
        trace = corruption.metal_trace(masks[mi][k], geom)
        cut, valid = corruption.cut_trace(clean_sino[k], trace)
        out.inputs[i], out.valid[i], out.targets[i] = cut, valid, clean_sino[k]
        out.metal[i], out.clean[i] = masks[mi][k], volume[k]
        out.index.append((phantom_id, mi, k))
    return out


def concat_pairs(parts: Sequence[InpaintPairs]) -> InpaintPairs:
    parts = [p for p in parts if len(p)]
    if not parts:
        raise ConfigurationError("no training pairs")
    return InpaintPairs(*(np.concatenate([getattr(p, f) for p in parts])
                          for f in ("inputs", "valid", "targets", "metal", "clean")),
                        index=[i for p in parts for i in p.index])


def corrupted_slices(clean, metal, window: Window = Window()):
    """Clean HU slices with the object pasted at the window ceiling."""
    return np.where(metal, window.hi, clean)


# -- training ----------------------------------------------------------------

@dataclass
class TrainingRun:
    epochs: int
    batch_size: int = 4
    seed: int = 0
    schedule: LrSchedule = LrSchedule(5e-3)
    hole_weight: float = 6.0
    loss_log: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


def _fit(net, run: TrainingRun, n: int, step: Callable[[np.ndarray], float],
         progress: Callable[[int, float], None] | None = None) -> list[float]:
    rng = np.random.default_rng(run.seed)
    state = AdamState(lr=run.schedule.initial_lr)
    run.loss_log = []
    for epoch in range(run.epochs):
        state.lr = lr_at_epoch(run.schedule, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, run.batch_size):
            idx = order[start:start + run.batch_size]
            loss = step(idx)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {start // run.batch_size}")
            adam_step(net.params, net.grads, state)
            total += loss * len(idx)
        run.loss_log.append(total / n)
        log.info("%s epoch %d lr %.3g loss %.6g", net.kind, epoch, state.lr, run.loss_log[-1])
        if progress:
            progress(epoch, run.loss_log[-1])
    return run.loss_log


def fit_output_scale(config: UNetConfig, residuals: np.ndarray) -> UNetConfig:
    """Set an unset ``output_scale`` to the RMS of the residual targets.

    Residual corrections are small next to the data; scaling the head keeps the
    optimiser's steps in proportion to them.
    """
    if config.output_scale is not None:
        return config
    rms = float(np.sqrt(np.mean(np.square(residuals)))) if residuals.size else 0.0
    return replace(config, output_scale=rms if rms > 0 and math.isfinite(rms) else 1.0)


def train_inpainter(pairs: InpaintPairs, run: TrainingRun, config: UNetConfig = UNetConfig(),
                    progress=None) -> PUNet:
    """Fit a partial-conv UNet on cut sinograms; loss weights hole bins by ``hole_weight``.

    In residual mode the network learns the correction to the per-row linear fill.
    """
    holes = ~pairs.valid
    targets = pairs.targets
    if config.mode == "residual":
        targets = targets - linear_fill(pairs.inputs, pairs.valid)
        config = fit_output_scale(config, targets[holes])
    net = PUNet(config, seed=run.seed)
    x, crop = _padded(pairs.inputs, net)
    m, _ = _padded(pairs.valid.astype(net.dtype), net)
    targets = targets.astype(net.dtype)

    def step(idx):
        raw = net.forward(x[idx], m[idx])
        pred = raw[(..., *crop)]
        loss, g = l1_loss_weighted(pred, targets[idx][:, None], holes[idx][:, None], run.hole_weight)
        dy = np.zeros_like(raw)
        dy[(..., *crop)] = g
        net.backward(dy)
        return loss

    _fit(net, run, len(pairs), step, progress)
    return net


def train_refiner(inputs: np.ndarray, targets: np.ndarray, ignore: np.ndarray | None,
                  run: TrainingRun, config: UNetConfig = UNetConfig(), progress=None) -> UNet:
    """Fit a plain UNet mapping normalised ``inputs`` to ``targets``.

    Pixels in ``ignore`` (the metal, which is pasted back afterwards) carry
    zero loss weight.
    """
    ign = np.zeros(inputs.shape, dtype=bool) if ignore is None else ignore
    if config.mode == "residual":
        config = fit_output_scale(config, (targets - inputs)[~ign])
    net = UNet(config, seed=run.seed)
    x, crop = _padded(inputs, net)
    t = targets.astype(net.dtype)

    def step(idx):
        raw = net.forward(x[idx])
        pred = raw[(..., *crop)]
        loss, g = l1_loss_weighted(pred, t[idx][:, None], ign[idx][:, None], 0.0)
        dy = np.zeros_like(raw)
        dy[(..., *crop)] = g
        net.backward(dy)
        return loss

    _fit(net, run, len(inputs), step, progress)
    return net


def _padded(arr, net):
    from .models import pad_to_multiple
    xp, crop = pad_to_multiple(np.asarray(arr)[:, None].astype(net.dtype), net.config.multiple)
    return np.ascontiguousarray(xp), crop


def refiner_inputs_from_inpainter(pairs: InpaintPairs, inpainter: Inpainter, geom: ProjectionGeometry,
                                  kind: FilterKind = FilterKind.RAM_LAK) -> np.ndarray:
    """Steps 4-5 on every pair: inpaint the cut sinogram, then reconstruct."""
    size = pairs.clean.shape[-1]
    out = np.empty(pairs.clean.shape)
    for i in range(len(pairs)):
        out[i] = reconstruct(inpainter(pairs.inputs[i], pairs.valid[i]), geom, size, kind)
    return out


def image_only_inputs(pairs: InpaintPairs, geom: ProjectionGeometry, window: Window = Window(),
                      kind: FilterKind = FilterKind.RAM_LAK) -> np.ndarray:
    """Uncorrected reconstructions of the metal-corrupted slices."""
    size = pairs.clean.shape[-1]
    corrupted = corrupted_slices(pairs.clean, pairs.metal, window)
    return np.stack([reconstruct(project(c, geom, window), geom, size, kind) for c in corrupted])


# -- evaluation --------------------------------------------------------------

@dataclass
class MetricsReport:
    variants: list[str]
    mae: dict[str, float]
    mse: dict[str, float]
    ssim: dict[str, float]
    n_slices: int
    per_slice: dict[str, list[tuple[float, float, float]]] = field(default_factory=dict, repr=False)

    def relative_drop(self, baseline: str = "limar") -> dict[str, float]:
        if baseline not in self.mse:
            return {}
        return {v: metrics.relative_mse_drop(self.mse[v], self.mse[baseline]) for v in self.variants}

    def rows(self):
        drops = self.relative_drop()
        for v in self.variants:
            yield v, self.mae[v], self.mse[v], self.ssim[v], drops.get(v)


def evaluate(clean_slices, metal_masks, cfg: PipelineConfig, variants: Sequence[str],
             inpainter=None, refiner=None, image_refiner=None,
             exclude_metal: bool = True) -> MetricsReport:
    """Corrupt each clean slice with its mask, restore with every variant, score in HU."""
    clean_slices = list(clean_slices)
    if not clean_slices:
        raise ConfigurationError("empty test set")
    unknown = set(variants) - set(VARIANTS + (NO_MAR,))
    if unknown:
        raise ConfigurationError(f"unknown variants {sorted(unknown)}")
    L = cfg.window.width
    per = {v: [] for v in variants}
    for clean, metal in zip(clean_slices, metal_masks):
        corrupted = corrupted_slices(clean, metal, cfg.window)
        roi = ~metal if exclude_metal else np.ones_like(metal)
        for v in variants:
            vcfg = PipelineConfig(cfg.geometry, cfg.window, cfg.metal_threshold, v, cfg.filter)
            out = mar_infer(corrupted, vcfg, inpainter, refiner, image_refiner).image
            per[v].append((metrics.mae(out, clean, roi), metrics.mse(out, clean, roi),
                           metrics.ssim(out, clean, L)))
    agg = {v: np.mean(np.asarray(per[v]), axis=0) for v in variants}
    return MetricsReport(list(variants), {v: float(agg[v][0]) for v in variants},
                         {v: float(agg[v][1]) for v in variants},
                         {v: float(agg[v][2]) for v in variants}, len(clean_slices), per)
