"""Command-line entry point: train, generate, evaluate, visualize, train-extractor."""

from __future__ import annotations

import argparse
import json
import os
import platform
import shutil
import sys
from contextlib import contextmanager

import numpy as np

from . import __version__
from . import checkpoint as ckpt
from . import imageio, kernels, metrics
from . import tensor as T
from .config import KEYS, parse_config, parse_value
from .data import read_idx, synthetic_blobs
from .errors import CocGanError, ConfigurationError, InputError, LoadError
from .models import Discriminator, Generator, ModelConfig

COMMANDS = ("train", "generate", "evaluate", "visualize", "train-extractor")
DEFAULT_OUT = {
    "train": "runs/latest",
    "generate": "samples",
    "evaluate": "metrics.txt",
    "visualize": "clusters",
    "train-extractor": "extractor.cocg",
}


def _flag_type(key):
    def convert(text):
        try:
            return parse_value(key, text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    convert.__name__ = key.name
    return convert


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cocgan",
        description="Context-cluster GAN toolkit. Batches are drop-last: a final short batch is skipped.",
    )
    parser.add_argument("--version", action="version", version=f"cocgan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"{name} (see --help)")
        p.add_argument("--config", help="key=value config file; flags override it")
        for key in KEYS:
            flag = "--" + key.name.replace("_", "-")
            if key.kind is bool:
                p.add_argument(flag, dest=key.name, action=argparse.BooleanOptionalAction,
                               default=argparse.SUPPRESS, help=key.help)
            else:
                p.add_argument(flag, dest=key.name, type=_flag_type(key), default=argparse.SUPPRESS,
                               help=f"{key.help} (default: {key.default})")
    return parser


def _out_path(rc):
    return rc.out or DEFAULT_OUT[rc.command]


def load_dataset(rc, test=False):
    if rc.dataset == "blobs":
        return synthetic_blobs(rc.blobs_n, rc.classes, seed=rc.seed + (1 if test else 0))
    images, labels = (rc.test_images, rc.test_labels) if test else (rc.images, rc.labels)
    which = "--test-images/--test-labels" if test else "--images/--labels"
    if not images or not labels:
        raise ConfigurationError(f"{which} are required for dataset=mnist")
    for path in (images, labels):
        if not os.path.exists(path):
            raise LoadError(f"no such file: {path}")
    return read_idx(images, labels, limit=rc.limit or None)


def manifest_for(rc):
    return {
        "command": rc.command,
        "config": rc.to_dict(),
        "config_text": rc.text,
        "seed": rc.seed,
        "code_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


@contextmanager
def staged_dir(path):
    """Build a directory under a temporary name; publish it only on success."""
    if os.path.exists(path) and (not os.path.isdir(path) or os.listdir(path)):
        raise ConfigurationError(f"output {path} already exists and is not empty")
    tmp = f"{path.rstrip(os.sep)}.partial-{os.getpid()}"
    os.makedirs(tmp)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if os.path.isdir(path):
        os.rmdir(path)
    os.replace(tmp, path)


def grid_inputs(gen_cfg, grid, seed):
    """Noise and labels for a grid x grid panel; row k uses label k when conditional."""
    rng = np.random.default_rng([seed, 2])
    noise = rng.standard_normal((grid * grid, gen_cfg.noise_dim)).astype(np.float32)
    labels = None
    if gen_cfg.conditional:
        labels = (np.arange(grid * grid) // grid) % gen_cfg.n_classes
    return noise, labels


def generate_images(gen, noise, labels, batch=250):
    out = []
    with T.no_grad():
        for s in range(0, len(noise), batch):
            lab = None if labels is None else labels[s:s + batch]
            out.append(gen(noise[s:s + batch], lab).data)
    return np.concatenate(out, axis=0)


def load_gan(path):
    params, meta, _ = ckpt.load(path)
    if not meta or meta.get("kind") != "gan":
        raise LoadError(f"{path} is not a GAN checkpoint")
    try:
        gcfg = ModelConfig.from_dict(meta["generator"])
        dcfg = ModelConfig.from_dict(meta["discriminator"])
    except (KeyError, TypeError) as exc:
        raise LoadError(f"{path}: incompatible model metadata ({exc})") from None
    rng = np.random.default_rng(0)
    gen, disc = Generator(gcfg, rng), Discriminator(dcfg, rng)
    ckpt.load_into(gen, params, "generator.")
    ckpt.load_into(disc, params, "discriminator.")
    return gen, disc, meta


def _check_compatible(rc, cfg, path):
    if rc.explicit("conditional") and rc.conditional != cfg.conditional:
        raise ConfigurationError(
            f"incompatible checkpoint {path}: conditional={cfg.conditional}, requested {rc.conditional}")
    if rc.explicit("classes") and cfg.conditional and rc.classes != cfg.n_classes:
        raise ConfigurationError(f"incompatible checkpoint {path}: {cfg.n_classes} classes, requested {rc.classes}")


def _require_checkpoint(rc):
    if not rc.checkpoint:
        raise ConfigurationError("--checkpoint is required")
    return load_gan(rc.checkpoint)


# commands


def cmd_train(rc, log):
    from .training import train_run

    data = load_dataset(rc)
    if data.n_classes != rc.classes:
        raise ConfigurationError(f"dataset has {data.n_classes} classes, config says {rc.classes}")
    gcfg, dcfg = rc.model_configs()
    tcfg = rc.train_config()
    rng = np.random.default_rng(rc.seed)
    gen, disc = Generator(gcfg, rng), Discriminator(dcfg, rng)
    noise, labels = grid_inputs(gcfg, rc.grid, rc.seed)

    def sample_writer(trainer, stem):
        imageio.write_grid(stem, generate_images(trainer.gen, noise, labels), rc.grid, rc.grid, rc.png)

    def report(trainer, rec):
        log(rec.log_line())

    out = _out_path(rc)
    manifest = manifest_for(rc)
    manifest["dataset"] = data.source
    with staged_dir(out) as tmp:
        result = train_run(data, gen, disc, tcfg, tmp, epoch_callback=report,
                           sample_writer=sample_writer, manifest=manifest)
    log(f"wrote {out} ({result.d_updates} D / {result.g_updates} G updates)")


def cmd_generate(rc, log):
    gen, _, meta = _require_checkpoint(rc)
    _check_compatible(rc, gen.cfg, rc.checkpoint)
    noise, labels = grid_inputs(gen.cfg, rc.grid, rc.seed)
    images = generate_images(gen, noise, labels)
    stem = _out_path(rc)
    for ext in (".pgm", ".ppm", ".png"):
        if os.path.exists(stem + ext):
            raise ConfigurationError(f"output {stem + ext} already exists")
    paths = imageio.write_grid(stem, images, rc.grid, rc.grid, rc.png)
    log("wrote " + ", ".join(paths))


def cmd_evaluate(rc, log):
    gen, _, _ = _require_checkpoint(rc)
    _check_compatible(rc, gen.cfg, rc.checkpoint)
    if not rc.extractor:
        raise ConfigurationError("--extractor is required")
    extractor, _ = metrics.load_extractor(rc.extractor, require_qualified=True)
    real = load_dataset(rc, test=bool(rc.test_images) or rc.dataset == "blobs")
    rng = np.random.default_rng([rc.seed, 3])
    noise = rng.standard_normal((rc.n_samples, gen.cfg.noise_dim)).astype(np.float32)
    labels = np.arange(rc.n_samples) % gen.cfg.n_classes if gen.cfg.conditional else None
    fake = generate_images(gen, noise, labels)
    report = metrics.evaluate(real.images, fake, extractor)
    out = _out_path(rc)
    tmp = f"{out}.tmp"
    try:
        metrics.write_report(tmp, report)
        os.replace(tmp, out)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    log(f"fid={report['fid']:.4f} kid={report['kid']:.6f} is={report['is']:.4f} -> {out}")


def cmd_visualize(rc, log):
    _, disc, _ = _require_checkpoint(rc)
    disc.set_centers(0, rc.centers)
    if rc.images or rc.dataset == "blobs":
        data = load_dataset(rc)
        images, labels = data.images[:rc.n_images], data.labels[:rc.n_images]
        if not disc.cfg.conditional:
            labels = None
    else:
        gen, _, _ = load_gan(rc.checkpoint)
        rng = np.random.default_rng([rc.seed, 4])
        noise = rng.standard_normal((rc.n_images, gen.cfg.noise_dim)).astype(np.float32)
        labels = np.arange(rc.n_images) % gen.cfg.n_classes if gen.cfg.conditional else None
        images = generate_images(gen, noise, labels)
    assign = disc.first_stage_assignment(images, labels).assignment
    grid = disc._stage_grids()[0]
    size = disc.cfg.image_size
    overlays = [imageio.assignment_overlay(a, grid, size) for a in assign]
    out = _out_path(rc)
    with staged_dir(out) as tmp:
        for i, ov in enumerate(overlays):
            imageio.write_pnm(os.path.join(tmp, f"overlay_{i:02d}.ppm"), ov)
        panel = imageio.paired_panel(images, overlays)
        imageio.write_pnm(os.path.join(tmp, "panel.ppm"), panel)
        if rc.png:
            imageio.write_png(os.path.join(tmp, "panel.png"), panel)
        with open(os.path.join(tmp, "assignments.tsv"), "w") as f:
            f.write(f"# grid {grid[0]}x{grid[1]} centers {rc.centers}\n")
            for i, a in enumerate(assign):
                f.write(f"{i}\t{' '.join(map(str, a.tolist()))}\n")
        with open(os.path.join(tmp, "manifest.json"), "w") as f:
            json.dump(manifest_for(rc), f, indent=2, sort_keys=True)
    log(f"wrote {len(overlays)} panels to {out}")


def cmd_train_extractor(rc, log):
    train = load_dataset(rc)
    if rc.dataset == "mnist" and not rc.test_images:
        raise ConfigurationError("--test-images/--test-labels are required for the held-out check")
    held = load_dataset(rc, test=True)
    model, report = metrics.train_feature_extractor(
        train, held, epochs=rc.extractor_epochs, seed=rc.seed, floor=rc.extractor_floor, log=log)
    out = _out_path(rc)
    metrics.save_extractor(out, model, report)
    if not report.qualified:
        raise InputError(
            f"extractor reached {report.held_out_accuracy:.3f} < floor {report.floor}; saved to {out} as unqualified")
    log(f"held-out accuracy {report.held_out_accuracy:.4f}; wrote {out}")


HANDLERS = {
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "visualize": cmd_visualize,
    "train-extractor": cmd_train_extractor,
}


def _thread_limit():
    value = os.environ.get("COCGAN_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise ConfigurationError(f"COCGAN_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigurationError(f"COCGAN_THREADS must be >= 1, got {n}")
    return n


def run_cli(argv=None, log=None):
    """Run one command; returns the process exit code."""
    log = log or (lambda msg: print(msg, flush=True))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        rc = parse_config(args.config, flags, args.command)
        threads = _thread_limit()
        if threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                HANDLERS[args.command](rc, log)
        else:
            HANDLERS[args.command](rc, log)
    except ConfigurationError as exc:
        print(f"cocgan {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except CocGanError as exc:
        print(f"cocgan {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"cocgan {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print(f"cocgan {args.command}: interrupted", file=sys.stderr)
        return 130
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
