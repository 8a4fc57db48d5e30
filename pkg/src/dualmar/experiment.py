"""Desk-scale end-to-end experiment: phantoms, masks, splits, training, evaluation.

Every stage reads its settings from a flat config dict (see :mod:`dualmar.config`)
and a run ``seed`` that offsets every generator seed, so two seeds give
independent data as well as independent network initialisations.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .models import UNetConfig
from .nn.optim import INPAINT_EPOCHS, INPAINT_SCHEDULE, UNET_EPOCHS, UNET_SCHEDULE, LrSchedule
from .phantom import PhantomParams, generate_head_phantom, split_dataset
from .pipeline import (NO_MAR, VARIANTS, InpaintPairs, MetricsReport, PipelineConfig, TrainingRun,
                       Window, build_training_pairs, concat_pairs, evaluate, image_only_inputs,
                       inpainter_from, normalize_hu, refiner_from, refiner_inputs_from_inpainter,
                       train_inpainter, train_refiner)
from .shapes import GenParams, generate_mask_set, make_rng
from .tomo import FilterKind, ProjectionGeometry

log = logging.getLogger(__name__)

Progress = Callable[[str, int, float], None]


# -- settings ---------------------------------------------------------------

def geometry(cfg: dict) -> ProjectionGeometry:
    return ProjectionGeometry.for_image(cfg["geom.size"], cfg["geom.n_angles"], cfg["geom.pixel_spacing"])


def window(cfg: dict) -> Window:
    return Window(cfg["window.lo"], cfg["window.hi"])


def pipeline_config(cfg: dict, variant: str | None = None) -> PipelineConfig:
    return PipelineConfig(geometry(cfg), window(cfg), cfg["pipeline.metal_threshold"],
                          variant or cfg["pipeline.variant"], FilterKind(cfg["geom.filter"]))


def gen_params(cfg: dict) -> GenParams:
    return GenParams(max_volume_fraction=cfg["gen.max_volume_fraction"],
                     primitive_max_size=cfg["gen.primitive_max_size"],
                     outlier_count_max=cfg["gen.outlier_count_max"],
                     overlap_min=cfg["gen.overlap_min"],
                     objects_per_scan_max=cfg["gen.objects_per_scan_max"],
                     masks_per_scan=cfg["gen.masks_per_scan"],
                     closing_radius=cfg["gen.closing_radius"])


def model_config(cfg: dict, role: str) -> UNetConfig:
    mode = cfg["inpainter.mode"] if role == "inpainter" else cfg["refiner.mode"]
    return UNetConfig(depth=cfg["model.depth"], base_channels=cfg["model.base_channels"], mode=mode)


def schedule(cfg: dict, role: str) -> tuple[int, LrSchedule]:
    """Epoch budget and learning-rate schedule for ``inpainter`` or ``refiner``."""
    ref_sched, ref_epochs = ((INPAINT_SCHEDULE, INPAINT_EPOCHS) if role == "inpainter"
                             else (UNET_SCHEDULE, UNET_EPOCHS))
    if cfg["train.schedule"] == "full":
        return ref_epochs, LrSchedule(cfg["train.lr"], ref_sched.milestones)
    epochs = cfg["train.epochs_inpaint"] if role == "inpainter" else cfg["train.epochs_refine"]
    scaled = ref_sched.scaled(epochs, ref_epochs)
    return epochs, LrSchedule(cfg["train.lr"], scaled.milestones)


# -- data -------------------------------------------------------------------

@dataclass
class Dataset:
    inpaint: InpaintPairs
    refine: InpaintPairs
    test: InpaintPairs
    split: tuple[list[int], list[int], list[int]]


def make_phantoms(cfg: dict, seed: int = 0):
    rng = make_rng(cfg["phantom.seed"] + seed)
    params = PhantomParams(edge_width=cfg["phantom.edge_width"])
    return [generate_head_phantom(rng, cfg["geom.size"], cfg["phantom.slices"], params)
            for _ in range(cfg["phantom.n"])]


def make_masks(cfg: dict, brains, seed: int = 0) -> list[list[np.ndarray]]:
    """``gen.masks_per_scan`` object masks for each brain mask, from one seeded stream."""
    rng = make_rng(cfg["gen.seed"] + seed)
    params = gen_params(cfg)
    return [[s.mask for s in generate_mask_set(rng, params, brain)] for brain in brains]


def make_dataset(cfg: dict, volumes, masks, seed: int = 0) -> Dataset:
    """Phantom-wise split and pair sampling for both trainings and the test set."""
    geom, win = geometry(cfg), window(cfg)
    ids = split_dataset(list(range(len(volumes))), cfg["data.split"], cfg["data.split_seed"] + seed)
    rng = make_rng(cfg["gen.seed"] + seed + 7919)
    n_test = cfg["data.test_slices"]
    per_test = math.ceil(n_test / len(ids[2]))

    def pairs(part, per):
        return concat_pairs([build_training_pairs(volumes[i], masks[i], geom, win, i, per, rng)
                             for i in part])

    inpaint = pairs(ids[0], cfg["data.pairs_per_phantom"])
    refine = pairs(ids[1], cfg["data.refine_pairs_per_phantom"])
    test = pairs(ids[2], per_test)
    if len(test) > n_test:
        test = InpaintPairs(test.inputs[:n_test], test.valid[:n_test], test.targets[:n_test],
                            test.metal[:n_test], test.clean[:n_test], test.index[:n_test])
    return Dataset(inpaint, refine, test, ids)


# -- training ---------------------------------------------------------------

@dataclass
class TrainedModels:
    inpainter: object
    refiner: object
    image_refiner: object
    loss_logs: dict[str, list[float]] = field(default_factory=dict)


def train_all(cfg: dict, data: Dataset, seed: int = 0, progress: Progress | None = None) -> TrainedModels:
    geom, win = geometry(cfg), window(cfg)
    kind = FilterKind(cfg["geom.filter"])
    tseed = cfg["train.seed"] + seed
    bs, hw = cfg["train.batch_size"], cfg["train.hole_weight"]

    def cb(stage):
        return (lambda e, loss: progress(stage, e, loss)) if progress else None

    epochs, sched = schedule(cfg, "inpainter")
    run_i = TrainingRun(epochs, bs, tseed, sched, hw)
    inp = train_inpainter(data.inpaint, run_i, model_config(cfg, "inpainter"), cb("inpainter"))

    epochs, sched = schedule(cfg, "refiner")
    targets = normalize_hu(data.refine.clean, win)
    x_full = refiner_inputs_from_inpainter(data.refine, inpainter_from(inp), geom, kind)
    run_r = TrainingRun(epochs, bs, tseed, sched)
    ref = train_refiner(x_full, targets, data.refine.metal, run_r, model_config(cfg, "refiner"),
                        cb("refiner"))
    x_img = image_only_inputs(data.refine, geom, win, kind)
    run_o = TrainingRun(epochs, bs, tseed, sched)
    img = train_refiner(x_img, targets, data.refine.metal, run_o, model_config(cfg, "refiner"),
                        cb("image_refiner"))
    return TrainedModels(inp, ref, img, {"inpainter": run_i.loss_log, "refiner": run_r.loss_log,
                                         "image_refiner": run_o.loss_log})


def evaluate_models(cfg: dict, data: Dataset, models: TrainedModels,
                    variants=VARIANTS + (NO_MAR,)) -> MetricsReport:
    return evaluate(list(data.test.clean), list(data.test.metal), pipeline_config(cfg), variants,
                    inpainter_from(models.inpainter), refiner_from(models.refiner),
                    refiner_from(models.image_refiner), cfg["eval.exclude_metal"])


@dataclass
class ExperimentResult:
    seed: int
    report: MetricsReport
    models: TrainedModels
    data: Dataset
    timings: dict[str, float]


def run_experiment(cfg: dict, seed: int = 0, progress: Progress | None = None) -> ExperimentResult:
    timings = {}
    t0 = time.perf_counter()
    phantoms = make_phantoms(cfg, seed)
    masks = make_masks(cfg, [p.brain_mask for p in phantoms], seed)
    data = make_dataset(cfg, [p.volume for p in phantoms], masks, seed)
    timings["data"] = time.perf_counter() - t0
    log.info("seed %d: %d/%d/%d pairs", seed, len(data.inpaint), len(data.refine), len(data.test))
    t1 = time.perf_counter()
    models = train_all(cfg, data, seed, progress)
    timings["train"] = time.perf_counter() - t1
    t2 = time.perf_counter()
    report = evaluate_models(cfg, data, models)
    timings["eval"] = time.perf_counter() - t2
    return ExperimentResult(seed, report, models, data, timings)
