"""Flat ``key = value`` run configuration with namespaced, documented keys.

Blank lines and ``#`` comments are ignored.  Unknown keys and unparsable
values are rejected rather than guessed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


@dataclass(frozen=True)
class Key:
    parse: object
    default: object
    doc: str


KEYS: dict[str, Key] = {
    "geom.size": Key(int, 128, "image side in pixels"),
    "geom.n_angles": Key(int, 180, "projection angles, uniform on [0, pi)"),
    "geom.pixel_spacing": Key(float, 1.0, "mm per pixel (detector bins use the same spacing)"),
    "geom.filter": Key(_choice("ramlak", "ramlak-hann"), "ramlak", "FBP filter"),
    "window.lo": Key(float, -1024.0, "HU mapped to 0"),
    "window.hi": Key(float, 3071.0, "HU mapped to 1"),
    "pipeline.variant": Key(_choice("full", "inpaint_only", "image_only", "limar", "none"), "full",
                            "restoration variant"),
    "pipeline.metal_threshold": Key(float, 2500.0, "HU at or above which a pixel is metal"),
    "phantom.n": Key(int, 30, "number of phantoms"),
    "phantom.slices": Key(int, 10, "slices per phantom"),
    "phantom.seed": Key(int, 0, "phantom generator seed"),
    "phantom.edge_width": Key(float, 1.0, "logistic edge width of phantom structures, pixels"),
    "gen.seed": Key(int, 1, "object-mask generator seed"),
    "gen.max_volume_fraction": Key(float, 0.10, "range side as a fraction of the image side"),
    "gen.primitive_max_size": Key(int, 10, "largest primitive linear size, voxels"),
    "gen.outlier_count_max": Key(int, 30, "most outlier primitives per object"),
    "gen.overlap_min": Key(float, 0.95, "required object/brain overlap"),
    "gen.objects_per_scan_max": Key(int, 10, "most objects per scene"),
    "gen.masks_per_scan": Key(int, 30, "scenes generated per phantom"),
    "gen.closing_radius": Key(int, 2, "ball radius of the closing structuring element"),
    "data.split": Key(_floats, (0.4, 0.4, 0.2), "inpainter/refiner/test phantom fractions"),
    "data.split_seed": Key(int, 0, "phantom split seed"),
    "data.pairs_per_phantom": Key(int, 8, "inpainter training pairs drawn per phantom"),
    "data.refine_pairs_per_phantom": Key(int, 16, "refiner training pairs drawn per phantom"),
    "data.test_slices": Key(int, 50, "held-out test slices"),
    "model.depth": Key(int, 4, "UNet resolution levels"),
    "model.base_channels": Key(int, 8, "channels at the first level (doubling per level)"),
    "inpainter.mode": Key(_choice("direct", "residual"), "residual",
                          "direct: predict hole bins; residual: predict a correction to the linear fill"),
    "refiner.mode": Key(_choice("direct", "residual"), "residual",
                        "direct: predict the image; residual: predict a correction to the input"),
    "train.seed": Key(int, 0, "training seed"),
    "train.batch_size": Key(int, 4, "minibatch size"),
    "train.lr": Key(float, 5e-3, "initial Adam learning rate"),
    "train.epochs_inpaint": Key(int, 50, "inpainter epochs"),
    "train.epochs_refine": Key(int, 30, "refiner epochs"),
    "train.hole_weight": Key(float, 6.0, "L1 weight on hole bins for the inpainter"),
    "train.schedule": Key(_choice("desk", "full"), "desk",
                          "desk: milestones rescaled to the epoch budget; full: the reference 500/200-epoch schedules"),
    "eval.exclude_metal": Key(_bool, True, "score only pixels outside the metal mask"),
}


def defaults() -> dict:
    return {k: v.default for k, v in KEYS.items()}


def parse_config(text: str, base: dict | None = None) -> dict:
    cfg = dict(base or defaults())
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        try:
            cfg[key] = KEYS[key].parse(value)
        except ValueError as err:
            raise ConfigurationError(f"line {lineno}: bad value for {key}: {err}") from None
    return cfg


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = defaults()
    if path is not None:
        cfg = parse_config(Path(path).read_text(), cfg)
    for k, v in (overrides or {}).items():
        if k not in KEYS:
            raise ConfigurationError(f"unknown key {k!r}")
        cfg[k] = v
    return cfg


def dump_config(cfg: dict) -> str:
    lines = []
    for k, key in KEYS.items():
        v = cfg[k]
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        lines.append(f"# {key.doc}\n{k} = {v}")
    return "\n".join(lines) + "\n"
