"""Command-line interface.

Every subcommand reads the run configuration from ``--config`` (flat
``key = value`` file) plus ``--set key=value`` overrides, writes a
``manifest.json`` next to its outputs, and on failure prints one diagnostic
line, removes whatever it had already written and exits nonzero.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, experiment, io, selftest
from .checkpoint import load_model, save_model, sidecar
from .config import KEYS, load_config, parse_config
from .errors import ConfigurationError, MarError
from .pipeline import (NO_MAR, VARIANTS, InpaintPairs, TrainingRun, image_only_inputs,
                       inpainter_from, mar_infer, normalize_hu, refiner_from,
                       refiner_inputs_from_inpainter, train_inpainter, train_refiner)
from .tomo import FilterKind

log = logging.getLogger("dualmar")

PAIR_FIELDS = ("inputs", "valid", "targets", "metal", "clean")


class Outputs:
    """Paths written by the current command, deleted again if it fails."""

    def __init__(self):
        self.paths: list[Path] = []

    def add(self, path) -> Path:
        path = Path(path)
        self.paths.append(path)
        return path

    def mkdir(self, path) -> Path:
        path = Path(path)
        missing = [p for p in (path, *path.parents) if not p.exists()]
        path.mkdir(parents=True, exist_ok=True)
        self.paths.extend(reversed(missing))
        return path

    def remove_all(self):
        for p in reversed(self.paths):
            if p.is_file():
                p.unlink()
            elif p.is_dir() and not any(p.iterdir()):
                p.rmdir()


# -- helpers ------------------------------------------------------------------

def _config(args) -> dict:
    cfg = load_config(args.config)
    if args.set:
        cfg = parse_config("\n".join(args.set), cfg)
    return cfg


def _manifest(out: Outputs, directory, args, cfg, seeds, extra=None):
    path = out.add(Path(directory) / "manifest.json")
    io.write_manifest(path, args.command, cfg, seeds, {"argv": sys.argv[1:], **(extra or {})})


def _sorted_files(path, prefix):
    path = Path(path)
    if path.is_file():
        return [path]
    files = sorted(path.glob(f"{prefix}_*.mtsr"))
    if not files:
        raise ConfigurationError(f"no {prefix}_*.mtsr files in {path}")
    return files


def save_pairs(path, pairs: InpaintPairs):
    tensors = {f: getattr(pairs, f) for f in PAIR_FIELDS}
    tensors["index"] = np.asarray(pairs.index, dtype=np.float32).reshape(-1, 3)
    io.write_named(path, tensors)


def load_pairs(path) -> InpaintPairs:
    t = io.read_named(path)
    missing = [f for f in PAIR_FIELDS + ("index",) if f not in t]
    if missing:
        raise ConfigurationError(f"{path} lacks tensors {missing}")
    index = [tuple(int(v) for v in row) for row in t["index"]]
    return InpaintPairs(*(np.asarray(t[f], dtype=bool if f in ("valid", "metal") else np.float64)
                          for f in PAIR_FIELDS), index=index)


def _progress(stage):
    return lambda epoch, loss: log.info("%s epoch %d loss %.6g", stage, epoch, loss)


# -- subcommands --------------------------------------------------------------

def cmd_phantom(args, cfg, out: Outputs):
    for key, val in (("phantom.n", args.n), ("geom.size", args.size),
                     ("phantom.slices", args.slices), ("phantom.seed", args.seed)):
        if val is not None:
            cfg[key] = val
    outdir = out.mkdir(args.out)
    for i, ph in enumerate(experiment.make_phantoms(cfg)):
        io.write_named(out.add(outdir / f"phantom_{i:03d}.mtsr"),
                       {"volume": ph.volume, "brain": ph.brain_mask, "skull": ph.skull_mask})
        io.write_pgm(out.add(outdir / f"phantom_{i:03d}.pgm"), ph.volume[ph.n_slices // 2])
    _manifest(out, outdir, args, cfg, {"phantom.seed": cfg["phantom.seed"]})
    log.info("wrote %d phantoms to %s", cfg["phantom.n"], outdir)


def cmd_genmasks(args, cfg, out: Outputs):
    if args.per_scan is not None:
        cfg["gen.masks_per_scan"] = args.per_scan
    if args.seed is not None:
        cfg["gen.seed"] = args.seed
    outdir = out.mkdir(args.out)
    files = _sorted_files(args.phantom, "phantom")
    brains = [io.read_named(f)["brain"] for f in files]
    for f, masks in zip(files, experiment.make_masks(cfg, brains)):
        name = f.stem.replace("phantom", "masks")
        io.write_named(out.add(outdir / f"{name}.mtsr"), {f"scene_{k:03d}": m for k, m in enumerate(masks)})
    _manifest(out, outdir, args, cfg, {"gen.seed": cfg["gen.seed"]})
    log.info("wrote mask sets for %d phantoms to %s", len(files), outdir)


def cmd_make_dataset(args, cfg, out: Outputs):
    seed = args.seed or 0
    ph_files = _sorted_files(args.phantoms, "phantom")
    mk_files = _sorted_files(args.masks, "masks")
    if len(ph_files) != len(mk_files):
        raise ConfigurationError(f"{len(ph_files)} phantoms but {len(mk_files)} mask sets")
    volumes = [io.read_named(f)["volume"].astype(np.float64) for f in ph_files]
    masks = [list(io.read_named(f).values()) for f in mk_files]
    cfg["geom.size"] = volumes[0].shape[-1]
    data = experiment.make_dataset(cfg, volumes, masks, seed)
    outdir = out.mkdir(args.out)
    for name in ("inpaint", "refine", "test"):
        save_pairs(out.add(outdir / f"{name}.mtsr"), getattr(data, name))
    _manifest(out, outdir, args, cfg, {"split_seed": cfg["data.split_seed"] + seed},
              {"split": [list(map(int, p)) for p in data.split],
               "pairs": {"inpaint": len(data.inpaint), "refine": len(data.refine), "test": len(data.test)}})
    log.info("pairs: %d inpaint, %d refine, %d test", len(data.inpaint), len(data.refine), len(data.test))


def _train_run(cfg, role, args):
    epochs, sched = experiment.schedule(cfg, role)
    if args.epochs is not None:
        epochs = args.epochs
    seed = cfg["train.seed"] if args.seed is None else args.seed
    return TrainingRun(epochs, cfg["train.batch_size"], seed, sched, cfg["train.hole_weight"])


def cmd_train_inpaint(args, cfg, out: Outputs):
    pairs = load_pairs(Path(args.data) / "inpaint.mtsr")
    run = _train_run(cfg, "inpainter", args)
    net = train_inpainter(pairs, run, experiment.model_config(cfg, "inpainter"), _progress("inpainter"))
    out.mkdir(Path(args.out).parent)
    path = out.add(args.out)
    out.add(sidecar(path))
    save_model(path, net, {"loss_log": run.loss_log, "seed": run.seed, "epochs": run.epochs,
                           "config_snapshot": cfg})


def cmd_train_refine(args, cfg, out: Outputs):
    pairs = load_pairs(Path(args.data) / "refine.mtsr")
    geom, win = experiment.geometry(cfg), experiment.window(cfg)
    kind = FilterKind(cfg["geom.filter"])
    if args.image_only:
        inputs = image_only_inputs(pairs, geom, win, kind)
    else:
        if not args.inpainter:
            raise ConfigurationError("train-refine needs --inpainter unless --image-only is given")
        inputs = refiner_inputs_from_inpainter(pairs, inpainter_from(load_model(args.inpainter)), geom, kind)
    run = _train_run(cfg, "refiner", args)
    net = train_refiner(inputs, normalize_hu(pairs.clean, win), pairs.metal, run,
                        experiment.model_config(cfg, "refiner"), _progress("refiner"))
    out.mkdir(Path(args.out).parent)
    path = out.add(args.out)
    out.add(sidecar(path))
    save_model(path, net, {"loss_log": run.loss_log, "seed": run.seed, "epochs": run.epochs,
                           "image_only": bool(args.image_only), "config_snapshot": cfg})


def _models(args):
    load = lambda p: load_model(p) if p else None  # noqa: E731
    ip, rf, ir = load(args.inpainter), load(args.refiner), load(args.image_refiner)
    return (inpainter_from(ip) if ip else None, refiner_from(rf) if rf else None,
            refiner_from(ir) if ir else None)


def cmd_infer(args, cfg, out: Outputs):
    variant = args.variant or cfg["pipeline.variant"]
    vol = io.read_tensor(args.input)
    flat = vol[None] if vol.ndim == 2 else vol
    if flat.ndim != 3 or flat.shape[1] != flat.shape[2]:
        raise ConfigurationError(f"expected square slices, got shape {vol.shape}")
    cfg["geom.size"] = flat.shape[-1]
    pcfg = experiment.pipeline_config(cfg, variant)
    ip, rf, ir = _models(args)
    result = np.empty_like(flat)
    for k, img in enumerate(flat):
        res = mar_infer(img, pcfg, ip, rf, ir)
        result[k] = res.image
        if res.noop:
            log.info("slice %d: no metal found, passed through unchanged (no-op)", k)
        if res.degenerate_rows:
            log.warning("slice %d: %d fully masked sinogram rows", k, res.degenerate_rows)
    out.mkdir(Path(args.output).parent)
    path = out.add(args.output)
    io.write_tensor(path, result.reshape(vol.shape))
    if args.preview:
        pdir = out.mkdir(args.preview)
        for k in range(len(result)):
            io.write_pgm(out.add(pdir / f"slice_{k:03d}.pgm"), result[k])
    _manifest(out, path.parent, args, cfg, {}, {"variant": variant, "input": str(args.input),
                                                "output": str(path)})


def cmd_baseline_limar(args, cfg, out: Outputs):
    args.variant = "limar"
    args.inpainter = args.refiner = args.image_refiner = None
    cmd_infer(args, cfg, out)


def write_report(path, rows, out: Outputs, extra_kv: dict | None = None):
    """Tab-separated table at ``path`` and ``key=value`` lines at ``path.kv``."""
    path = Path(path)
    lines = ["variant\tMAE_HU\tMSE_HU2\tSSIM\tMSE_drop_vs_limar_pct"]
    kv = []
    for v, mae_, mse_, ssim_, drop in rows:
        d = "" if drop is None else f"{drop:.1f}"
        lines.append(f"{v}\t{mae_:.2f}\t{mse_:.1f}\t{ssim_:.4f}\t{d}")
        kv += [f"{v}.mae={mae_!r}", f"{v}.mse={mse_!r}", f"{v}.ssim={ssim_!r}"]
        if drop is not None:
            kv.append(f"{v}.mse_drop_pct={drop!r}")
    kv += [f"{k}={v}" for k, v in (extra_kv or {}).items()]
    out.mkdir(path.parent)
    out.add(path).write_text("\n".join(lines) + "\n")
    out.add(path.with_name(path.name + ".kv")).write_text("\n".join(kv) + "\n")
    return "\n".join(lines)


def cmd_eval(args, cfg, out: Outputs):
    from .pipeline import evaluate
    test = load_pairs(args.test)
    cfg["geom.size"] = test.clean.shape[-1]
    variants = args.variants or list(VARIANTS)
    ip, rf, ir = _models(args)
    report = evaluate(list(test.clean), list(test.metal), experiment.pipeline_config(cfg), variants,
                      ip, rf, ir, cfg["eval.exclude_metal"])
    table = write_report(args.report, report.rows(), out, {"n_slices": report.n_slices})
    _manifest(out, Path(args.report).parent, args, cfg, {}, {"variants": variants})
    print(table)


def cmd_experiment(args, cfg, out: Outputs):
    outdir = out.mkdir(args.out)
    progress = lambda stage, e, loss: log.info("seed %s %s epoch %d loss %.6g", seed, stage, e, loss)  # noqa: E731
    for seed in args.seeds:
        res = experiment.run_experiment(cfg, seed, progress)
        print(write_report(outdir / f"report_seed{seed}.tsv", res.report.rows(), out,
                           {"n_slices": res.report.n_slices,
                            **{f"time_{k}_s": f"{v:.1f}" for k, v in res.timings.items()}}))
        if args.save_models:
            for name in ("inpainter", "refiner", "image_refiner"):
                p = out.add(outdir / f"{name}_seed{seed}.mtsr")
                out.add(sidecar(p))
                save_model(p, getattr(res.models, name), {"loss_log": res.models.loss_logs[name]})
    _manifest(out, outdir, args, cfg, {"seeds": list(args.seeds)})


def cmd_selftest(args, cfg, out: Outputs):
    if not selftest.run():
        raise MarError("selftest failed")


def cmd_config(args, cfg, out: Outputs):
    for name, key in KEYS.items():
        print(f"{name} = {cfg[name]!r}  # {key.doc}")


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualmar", description="Dual-domain CT metal artifact reduction")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("-q", "--quiet", action="store_true", help="only print warnings and errors")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", help="generate synthetic head phantoms")
    s.add_argument("--n", type=int)
    s.add_argument("--size", type=int)
    s.add_argument("--slices", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_phantom)

    s = sub.add_parser("genmasks", help="generate high-density object mask sets per phantom")
    s.add_argument("--phantom", required=True, help="phantom file or directory of phantom_*.mtsr")
    s.add_argument("--per-scan", type=int, help="mask sets per phantom (default gen.masks_per_scan)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_genmasks)

    s = sub.add_parser("make-dataset", help="split phantoms and build training/test pairs")
    s.add_argument("--phantoms", required=True)
    s.add_argument("--masks", required=True)
    s.add_argument("--seed", type=int, default=0, help="offset added to split and sampling seeds")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_make_dataset)

    for name, fn, role in (("train-inpaint", cmd_train_inpaint, "inpainting"),
                           ("train-refine", cmd_train_refine, "image refining")):
        s = sub.add_parser(name, help=f"train the {role} network")
        s.add_argument("--data", required=True, help="make-dataset output directory")
        s.add_argument("--out", required=True, help="checkpoint path")
        s.add_argument("--epochs", type=int)
        s.add_argument("--seed", type=int)
        if name == "train-refine":
            s.add_argument("--inpainter", help="frozen inpainter checkpoint")
            s.add_argument("--image-only", action="store_true",
                           help="train on uncorrected reconstructions (image-to-image ablation)")
        s.set_defaults(fn=fn)

    def model_args(s):
        s.add_argument("--inpainter")
        s.add_argument("--refiner")
        s.add_argument("--image-refiner")

    s = sub.add_parser("infer", help="restore a volume or slice")
    s.add_argument("--variant", choices=VARIANTS + (NO_MAR,))
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", dest="output", required=True)
    s.add_argument("--preview", help="directory for brain-window PGM previews")
    model_args(s)
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("baseline-limar", help="restore with linear sinogram interpolation")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", dest="output", required=True)
    s.add_argument("--preview")
    s.set_defaults(fn=cmd_baseline_limar)

    s = sub.add_parser("eval", help="score variants on a test set")
    s.add_argument("--test", required=True, help="test.mtsr from make-dataset")
    s.add_argument("--variants", nargs="+", choices=VARIANTS + (NO_MAR,))
    s.add_argument("--report", required=True, help="table path; key=value copy written to PATH.kv")
    model_args(s)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("experiment", help="full desk-scale run (data, training, evaluation) per seed")
    s.add_argument("--seeds", type=int, nargs="+", default=[0])
    s.add_argument("--out", required=True)
    s.add_argument("--save-models", action="store_true")
    s.set_defaults(fn=cmd_experiment)

    s = sub.add_parser("selftest", help="run the built-in oracle checks")
    s.set_defaults(fn=cmd_selftest)

    s = sub.add_parser("config", help="print the effective configuration")
    s.set_defaults(fn=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    out = Outputs()
    try:
        cfg = _config(args)
        args.fn(args, cfg, out)
    except (MarError, OSError, ValueError, KeyError) as err:
        out.remove_all()
        msg = str(err).splitlines()[0] if str(err) else type(err).__name__
        print(f"dualmar {args.command}: error: {msg}", file=sys.stderr)
        return 2
    except BaseException:
        out.remove_all()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
