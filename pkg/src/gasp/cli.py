"""Command-line interface: ``gasp fit | train | sample | verify``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
error, 3 numeric failure or failed verification. Progress goes to stderr;
artifacts are written only under the requested output path.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import formats
from .checkpoint import load_checkpoint, load_function, save_function
from .config import apply_overrides, read_config
from .errors import ConfigError, DataFormatError, DimensionError, GaspError, NumericError
from .function_rep import MlpArchitecture, evaluate, fit_single
from .lipschitz import format_report, report_csv, verify_all
from .pointcloud import (GridSpec, PointCloud, denormalize_features, grid_coords, grid_to_pointcloud,
                         latlon_coords)
from .presets import DATA_KINDS, build_models, defaults
from .rff import sample_encoding
from .rng import make_rng, standard_normal
from .training import Trainer, build_generator, write_history_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

KIND_EXTS = {
    "image": formats.IMAGE_EXTS,
    "voxel": formats.VOXEL_EXTS,
    "sphere": (".csv",),
    "points": (".csv",),
}


# optional key=value sidecar with feature_min / feature_max for lat-lon data
METADATA_NAME = "metadata.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _positive_ints(text: str) -> List[int]:
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("resolutions must be positive integers")
    return values


# -- data ---------------------------------------------------------------------------

def load_dataset(data_dir, kind: str, feature_min: Optional[float] = None,
                 feature_max: Optional[float] = None) -> Tuple[List[PointCloud], Dict[str, object]]:
    """Read every file of the given kind in ``data_dir`` (sorted by name).

    Lat-lon grids are normalized with feature_min / feature_max taken from the
    arguments, else from a ``metadata.txt`` sidecar, else from the data.
    """
    if not os.path.isdir(data_dir):
        raise DataFormatError(f"{data_dir}: not a directory")
    names = sorted(n for n in os.listdir(data_dir)
                   if n != METADATA_NAME and os.path.splitext(n)[1].lower() in KIND_EXTS[kind])
    if not names:
        raise DataFormatError(f"{data_dir}: no {kind} files ({', '.join(KIND_EXTS[kind])})")
    paths = [os.path.join(data_dir, n) for n in names]
    info: Dict[str, object] = {"kind": kind}
    if kind == "points":
        clouds = [formats.read_csv_pointcloud(p) for p in paths]
        info.update(dims="", channels=clouds[0].k, resolution=max(pc.n for pc in clouds))
        return clouds, info
    if kind == "sphere":
        meta_path = os.path.join(data_dir, METADATA_NAME)
        if os.path.exists(meta_path):
            meta = formats.read_metadata(meta_path)
            try:
                feature_min = float(meta["feature_min"]) if feature_min is None and "feature_min" in meta else feature_min
                feature_max = float(meta["feature_max"]) if feature_max is None and "feature_max" in meta else feature_max
            except ValueError:
                raise DataFormatError(f"{meta_path}: feature_min/feature_max must be numbers") from None
        grids = [formats.read_latlon_csv(p) for p in paths]
        _same_shape(grids, paths)
        lo = float(min(g.min() for g in grids)) if feature_min is None else feature_min
        hi = float(max(g.max() for g in grids)) if feature_max is None else feature_max
        if not hi > lo:
            hi = lo + 1.0
        spec = GridSpec(grids[0].shape, "latlon", 1)
        clouds = [grid_to_pointcloud(g, spec, lo, hi) for g in grids]
        info.update(dims=grids[0].shape, channels=1, feature_min=lo, feature_max=hi,
                    resolution=max(grids[0].shape))
        return clouds, info
    if kind == "image":
        grids = [formats.read_ppm(p) if p.lower().endswith(".ppm") else formats.read_pgm(p) for p in paths]
        _same_shape(grids, paths)
        channels = 3 if grids[0].ndim == 3 else 1
        spec = GridSpec(grids[0].shape[:2], "image", channels)
    else:
        grids = [formats.read_voxel_text(p) for p in paths]
        _same_shape(grids, paths)
        channels = 1
        spec = GridSpec(grids[0].shape, "voxel", 1)
    clouds = [grid_to_pointcloud(g, spec) for g in grids]
    info.update(dims=spec.dims, channels=channels, resolution=max(spec.dims))
    return clouds, info


def _same_shape(grids, paths) -> None:
    for g, p in zip(grids, paths):
        if g.shape != grids[0].shape:
            raise DimensionError(f"{p}: shape {g.shape} differs from {paths[0]} ({grids[0].shape})")


def _data_config(info: Dict[str, object]) -> Dict[str, object]:
    out = {"data.kind": info["kind"], "data.channels": info["channels"],
           "data.dims": ",".join(str(v) for v in info.get("dims") or ())}
    for key in ("feature_min", "feature_max"):
        if key in info:
            out[f"data.{key}"] = repr(float(info[key]))
    return out


# -- commands ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    pc, info = formats.load_pointcloud_file(args.input)
    kind = info["kind"]
    if args.m and args.m > 0:
        sigma = args.sigma if args.sigma is not None else (2.0 if kind == "image" and pc.k == 3 else 1.0)
        enc = sample_encoding(args.m, pc.d, sigma, args.seed)
        input_dim = enc.out_dim
    else:
        enc, input_dim = None, pc.d
    arch = MlpArchitecture(input_dim, tuple(args.hidden), pc.k)
    result = fit_single(pc, arch, enc, steps=args.steps, lr=args.lr, seed=args.seed)
    info["dims"] = info.get("dims") or ()
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    save_function(args.out, result.function, _data_config(info))
    print(f"final MSE: {result.loss:.6e}")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = read_config(args.config) if args.config else {"model": {}, "training": {}, "run": {}}
    run = overrides["run"]
    kind = args.kind or run.get("kind")
    if kind is None:
        raise UsageError("--kind is required (or set kind in the [data] section)")
    clouds, info = load_dataset(args.data, kind, run.get("feature_min"), run.get("feature_max"))
    spec, tcfg = defaults(kind, clouds[0].d, clouds[0].k, int(info["resolution"]))
    spec, tcfg = apply_overrides(spec, tcfg, overrides)
    flag_values = {"K_subsample": args.k_subsample, "epochs": args.epochs, "seed": args.seed,
                   "batch_size": args.batch_size, "max_steps": args.max_steps}
    spec, tcfg = apply_overrides(spec, tcfg, {"training": {k: v for k, v in flag_values.items() if v is not None}})
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "checkpoint.gasp")
    if args.resume:
        fixed = {"--k-subsample": args.k_subsample, "--batch-size": args.batch_size, "--seed": args.seed,
                 "--config": args.config}
        clash = [flag for flag, v in fixed.items() if v is not None]
        if clash:
            raise UsageError(f"{', '.join(clash)} cannot change when resuming; the checkpoint fixes them")
        trainer = Trainer.load(args.resume, clouds)
        extend = {k: v for k, v in (("epochs", args.epochs), ("max_steps", args.max_steps)) if v is not None}
        if extend:
            trainer.config = replace(trainer.config, **extend)
    else:
        generator, stack = build_models(spec, tcfg.seed)
        trainer = Trainer(clouds, generator, stack, tcfg)
    every = args.checkpoint_every if args.checkpoint_every is not None else int(run.get("checkpoint_every", 0))
    total = trainer.total_steps
    extra = _data_config(info)

    def progress(rec):
        if rec.step % args.log_every == 0 or rec.step == total:
            _log(f"step {rec.step}/{total} d_loss={rec.d_loss:.4f} g_loss={rec.g_loss:.4f} r1={rec.r1:.4g}")

    _log(f"training on {len(clouds)} {kind} examples for {total} steps")
    try:
        while trainer.step_count < total:
            progress(trainer.step())
            if every and trainer.step_count % every == 0:
                trainer.save(ckpt, extra)
    except NumericError:
        trainer.save(ckpt, extra)
        write_history_csv(os.path.join(args.out, "losses.csv"), trainer.history)
        raise
    trainer.save(ckpt, extra)
    write_history_csv(os.path.join(args.out, "losses.csv"), trainer.history)
    _log(f"wrote {ckpt}")
    return EXIT_OK


def _sample_coords(kind: str, coord_dim: int, R: int) -> Tuple[np.ndarray, Tuple[int, ...]]:
    if kind == "image":
        return grid_coords((R, R)), (R, R)
    if kind == "voxel":
        return grid_coords((R, R, R)), (R, R, R)
    if kind == "sphere":
        return latlon_coords(R, 2 * R), (R, 2 * R)
    dims = (R,) * coord_dim
    return grid_coords(dims), dims


def _write_sample(path_stem: str, kind: str, values: np.ndarray, dims, cfg: Dict[str, str],
                  threshold: float, coords: np.ndarray) -> str:
    channels = values.shape[1]
    if kind == "image":
        spec = GridSpec(dims, "image", channels)
        px = np.clip(np.rint(denormalize_features(values, spec)), 0, 255).astype(np.uint8)
        if channels == 3:
            formats.write_ppm(path_stem + ".ppm", px.reshape(dims + (3,)))
            return path_stem + ".ppm"
        formats.write_pgm(path_stem + ".pgm", px.reshape(dims))
        return path_stem + ".pgm"
    if kind == "voxel":
        # occupancy (f + 1) / 2 >= threshold, i.e. f >= 2 * threshold - 1
        occ = (values[:, 0] >= 2.0 * threshold - 1.0).astype(np.uint8)
        formats.write_voxel_text(path_stem + ".vox", occ.reshape(dims))
        return path_stem + ".vox"
    if kind == "sphere" and "data.feature_min" in cfg:
        spec = GridSpec(dims, "latlon", 1)
        raw = denormalize_features(values[:, 0], spec, float(cfg["data.feature_min"]), float(cfg["data.feature_max"]))
        formats.write_latlon_csv(path_stem + ".csv", raw.reshape(dims))
        return path_stem + ".csv"
    formats.write_csv_pointcloud(path_stem + ".csv", PointCloud(coords, values))
    return path_stem + ".csv"


def cmd_sample(args) -> int:
    ck = load_checkpoint(args.ckpt)
    cfg = ck.config
    kind = cfg.get("data.kind", "points")
    if cfg.get("model") == "function":
        f, _ = load_function(args.ckpt)
        functions = [f]
    else:
        gen = build_generator(ck)
        z = standard_normal(make_rng(args.seed), (args.count, gen.latent_dim))
        # one latent per sample index, shared by every resolution
        functions = [gen.function(z[i]) for i in range(args.count)]
    os.makedirs(args.out, exist_ok=True)
    for R in args.resolution:
        coords, dims = _sample_coords(kind, functions[0].coord_dim, R)
        for i, f in enumerate(functions):
            values = evaluate(f, coords)
            path = _write_sample(os.path.join(args.out, f"sample{i:03d}_r{R}"), kind, values, dims, cfg,
                                 args.threshold, coords)
            _log(f"wrote {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    reports = verify_all(args.trials, args.seed, pairs=args.pairs)
    sys.stdout.write(format_report(reports))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "verify.csv"), "w") as fh:
            fh.write(report_csv(reports))
    ok = all(r.passed for r in reports)
    print("ALL PASS" if ok else "FAILURES PRESENT")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gasp", description="Generative models of functions over point clouds.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    f = sub.add_parser("fit", help="fit one datapoint with an MLP")
    f.add_argument("--input", required=True, help="PPM, PGM, CSV point cloud or voxel text file")
    f.add_argument("--steps", type=int, default=1000)
    f.add_argument("--m", type=int, default=128, help="number of Fourier frequencies (0 disables the encoding)")
    f.add_argument("--sigma", type=float, default=None)
    f.add_argument("--lr", type=float, default=1e-3)
    f.add_argument("--hidden", type=_positive_ints, default=[128, 128, 128])
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True, help="checkpoint path")
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("train", help="train the generator and discriminator")
    t.add_argument("--data", required=True, help="directory of uniform data files")
    t.add_argument("--kind", choices=DATA_KINDS)
    t.add_argument("--k-subsample", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--max-steps", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--config", default=None)
    t.add_argument("--checkpoint-every", type=int, default=None)
    t.add_argument("--log-every", type=int, default=50)
    t.add_argument("--resume", default=None, help="continue from a training checkpoint")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="sample functions and write them at one or more resolutions")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--resolution", type=_positive_ints, required=True)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    v = sub.add_parser("verify", help="check the Lipschitz bounds numerically")
    v.add_argument("--trials", type=int, default=200)
    v.add_argument("--pairs", type=int, default=10**4)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "count", 1) < 1:
        parser.error("--count must be positive")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except NumericError as exc:
        _log(f"numeric error: {exc}")
        return EXIT_NUMERIC
    except (GaspError, OSError) as exc:
        _log(f"error: {exc}")
        return EXIT_DATA
    except ValueError as exc:
        # remaining value errors come from inconsistent settings, not from data
        _log(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
