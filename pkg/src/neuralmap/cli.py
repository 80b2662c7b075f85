"""Command-line entry point: terrain, dataset, train, eval, fuse-sim, export.

Settings come from ``--config`` (key=value lines) and are overridden by
explicit options.  Exit codes: 0 ok, 2 usage or configuration error,
3 data error (bad file, shape mismatch, empty dataset).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import io
from .augment import AugmentConfig
from .dataset import MAPPING_PROPORTIONS, synthesize
from .encoder import EncoderConfig, attention_heatmap, encode
from .fusion import GlobalMap, query
from .geometry import Pose
from .predictor import Dataset, GatedNet, ShapeMismatch, TrainConfig, baseline_arrays, evaluate, mean_loss, train
from .sensing import QUERY_GRIDS, STANDING_HEIGHT, LocalGrid
from .sim import ConfigError, RunConfig, run
from .terrain import Family, Heightfield, RobotProfile, TerrainSpec, generate

log = logging.getLogger("neuralmap")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3


class UsageError(ValueError):
    pass


class DataError(ValueError):
    pass


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read config: {e}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _settings(args, keys) -> dict:
    """Config-file values overridden by options that were given."""
    merged = dict(args.config_values)
    for key in keys:
        v = getattr(args, key, None)
        if v is not None:
            merged[key] = v
    return merged


def _pair(text) -> tuple[float, float]:
    parts = [float(v) for v in str(text).split(",")]
    if len(parts) != 2:
        raise UsageError(f"expected two comma-separated numbers, got {text!r}")
    return parts[0], parts[1]


def _as(kind, value, key):
    try:
        if kind is bool:
            return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
        return kind(value)
    except (TypeError, ValueError):
        raise UsageError(f"bad value {value!r} for {key}") from None


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(path, kind):
    try:
        obj = io.load(path)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None
    if not isinstance(obj, kind):
        raise DataError(f"{path} holds a {type(obj).__name__}, expected {kind.__name__}")
    return obj


# terrain

def cmd_terrain(args) -> int:
    s = _settings(args, ["family", "difficulty", "seed", "profile", "floor", "resolution"])
    if "family" not in s:
        raise UsageError("terrain needs --family")
    difficulty = _as(float, s.get("difficulty", 0.5), "difficulty")
    if not 0.0 <= difficulty <= 1.0:
        clamped = min(1.0, max(0.0, difficulty))
        log.warning("difficulty %s outside [0, 1], clamped to %s", difficulty, clamped)
        difficulty = clamped
    try:
        spec = TerrainSpec(s["family"], difficulty, _as(int, s.get("seed", 0), "seed"),
                           s.get("profile", "QuadrupedA"), floor=s.get("floor", "random"),
                           resolution=_as(float, s.get("resolution", 0.04), "resolution"))
    except ValueError as e:
        raise UsageError(str(e)) from None
    field = generate(spec)
    out = _out_dir(args)
    stem = out / f"terrain_{spec.family.value}_{spec.seed}"
    io.save(field, stem.with_suffix(".emhf"))
    io.write_pgm(stem.with_suffix(".pgm"), field.top_surface())
    print(stem.with_suffix(".emhf"))
    return EXIT_OK


# dataset

def _parse_mix(text) -> dict:
    props = {}
    for item in str(text).split(","):
        if not item.strip():
            continue
        name, _, frac = item.partition("=")
        try:
            props[Family.parse(name.strip())] = float(frac)
        except ValueError:
            raise UsageError(f"bad mix entry {item!r}") from None
    if not props or any(v < 0 for v in props.values()) or abs(sum(props.values()) - 1.0) > 1e-6:
        raise UsageError(f"mix fractions must be non-negative and sum to 1, got {sum(props.values())!r}")
    return props


def _augment_config(settings: dict, seed: int) -> AugmentConfig:
    kw = {}
    for f in fields(AugmentConfig):
        if f.name in settings and f.name != "seed":
            raw = settings[f.name]
            kw[f.name] = _pair(raw) if "range" in f.name or "bounds" in f.name else \
                _as(int if f.name == "crop_max_cells" else float, raw, f.name)
    try:
        return AugmentConfig(seed=seed, **kw)
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_dataset(args) -> int:
    s = _settings(args, ["count", "seed", "profile", "mix", "difficulty", "poses_per_terrain"])
    n = _as(int, s.get("count", 1000), "count")
    if n <= 0:
        raise UsageError("dataset size must be positive")
    seed = _as(int, s.get("seed", 0), "seed")
    mix = _parse_mix(s["mix"]) if "mix" in s else MAPPING_PROPORTIONS
    difficulty = _as(float, s["difficulty"], "difficulty") if "difficulty" in s else None
    try:
        ds = synthesize(n, mix, _augment_config(s, seed), seed, s.get("profile", "QuadrupedA"),
                        poses_per_terrain=_as(int, s.get("poses_per_terrain", 25), "poses_per_terrain"),
                        difficulty=difficulty)
    except ValueError as e:
        raise UsageError(str(e)) from None
    path = io.save(ds, _out_dir(args) / "dataset.emds")
    print(path)
    return EXIT_OK


# train / eval

def _train_config(s: dict) -> TrainConfig:
    kw = {}
    for key, kind in (("beta", float), ("learning_rate", float), ("batch_size", int), ("epochs", int),
                      ("tv_epsilon", float), ("tv_reweight", bool), ("seed", int), ("lr_decay", float),
                      ("grad_clip", float)):
        if key in s:
            kw[key] = _as(kind, s[key], key)
    if "widths" in s:
        kw["widths"] = tuple(int(v) for v in str(s["widths"]).split(","))
    try:
        return TrainConfig(**kw)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None


def cmd_train(args) -> int:
    s = _settings(args, ["dataset", "epochs", "learning_rate", "batch_size", "beta", "seed", "val_fraction",
                         "resume"])
    if "dataset" not in s:
        raise UsageError("train needs --dataset")
    data = _load(s["dataset"], Dataset)
    if len(data) == 0:
        raise DataError("dataset is empty")
    cfg = _train_config(s)
    frac = _as(float, s.get("val_fraction", 0.2), "val_fraction")
    tr, va = data.split(1.0 - frac)
    if len(tr) == 0:
        raise DataError("no training samples after the validation split")
    net = _load(s["resume"], GatedNet) if s.get("resume") else None
    if net is not None and (net.rows, net.cols) != data.shape:
        raise DataError(f"weights expect {(net.rows, net.cols)}, dataset is {data.shape}")
    net, curve = train(tr, cfg, va if len(va) else None, net)
    out = _out_dir(args)
    net.meta = {"train": cfg.to_dict(), "dataset": str(s["dataset"]), "val_fraction": frac}
    io.save(net, out / "weights.emwt")
    io.write_csv(out / "curve.csv", ("epoch", "train_loss", "val_loss"),
                 [(e, repr(a), repr(b)) for e, a, b in curve])
    print(out / "weights.emwt")
    return EXIT_OK


def cmd_eval(args) -> int:
    s = _settings(args, ["weights", "dataset", "beta"])
    if "dataset" not in s:
        raise UsageError("eval needs --dataset")
    data = _load(s["dataset"], Dataset)
    if len(data) == 0:
        raise DataError("dataset is empty")
    beta = _as(float, s.get("beta", 0.5), "beta")
    bm, bs = baseline_arrays(data.input_elev, data.input_valid, data.resolution)
    report = {"dataset": str(s["dataset"]), "samples": len(data), "beta": beta,
              "baseline_l05": mean_loss(bm, bs, data, beta)}
    if s.get("weights"):
        net = _load(s["weights"], GatedNet)
        if (net.rows, net.cols) != data.shape:
            raise DataError(f"weights expect {(net.rows, net.cols)}, dataset is {data.shape}")
        report["weights"] = str(s["weights"])
        report["trained_l05"] = evaluate(net, data, beta)
    out = _out_dir(args)
    (out / "eval.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


# fuse-sim

def cmd_fuse_sim(args) -> int:
    s = dict(args.config_values)
    for item in args.set or []:
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"--set expects key=value, got {item!r}")
        s[key.strip().replace("-", "_")] = value.strip()
    if args.seed is not None:
        s["seed"] = str(args.seed)
    cfg = RunConfig.from_mapping(s)
    res = run(cfg)
    out = _out_dir(args)
    io.save(res.gmap, out / "map.emgm")
    io.write_pgm(out / "elevation.pgm", res.gmap.elevation)
    io.write_pgm(out / "variance.pgm", np.log(res.gmap.variance))
    io.write_csv(out / "stats.csv", ("frame", "valid", "won", "rejected"), res.stats_rows())
    io.write_csv(out / "metrics.csv", ("frame", "l05", "observed_cells", "points"), res.metric_rows())
    # wall time varies run to run, so it lives apart from the reproducible outputs
    io.write_csv(out / "timing.csv", ("frame", "fuse_query_ms"),
                 [(r.frame, f"{1e3 * r.fuse_seconds:.4f}") for r in res.frames])
    times = np.array([r.fuse_seconds for r in res.frames])
    summary = {"config": cfg.to_dict(), "frames": len(res.frames),
               "final_l05": res.frames[-1].l05, "mean_l05": float(np.mean([r.l05 for r in res.frames])),
               "observed_cells": res.frames[-1].observed}
    (out / "run.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{len(res.frames)} frames, fuse+query median {1e3 * np.median(times):.3f} ms, "
          f"final L0.5 {res.frames[-1].l05:.4f}")
    return EXIT_OK


# export

def cmd_export(args) -> int:
    obj = _load(args.input, object)
    out = _out_dir(args)
    stem = out / Path(args.input).stem
    written = []
    if isinstance(obj, Heightfield):
        written.append(io.write_pgm(stem.with_suffix(".pgm"), obj.top_surface()))
    elif isinstance(obj, LocalGrid):
        written.append(io.write_pgm(stem.with_suffix(".pgm"), np.where(obj.valid, obj.elevations, np.nan)))
    elif isinstance(obj, GatedNet):
        path = stem.with_suffix(".json")
        path.write_text(json.dumps(obj.descriptor(), indent=2, sort_keys=True) + "\n")
        written.append(path)
    elif isinstance(obj, Dataset):
        path = stem.with_suffix(".json")
        path.write_text(json.dumps({"count": len(obj), "shape": list(obj.shape), "meta": obj.meta},
                                   indent=2, sort_keys=True) + "\n")
        written.append(path)
    elif isinstance(obj, GlobalMap):
        written.append(io.write_pgm(Path(f"{stem}_elevation.pgm"), obj.elevation))
        written.append(io.write_pgm(Path(f"{stem}_variance.pgm"), np.log(obj.variance)))
        if args.heatmap:
            written += _export_heatmap(obj, stem, args)
    for p in written:
        print(p)
    return EXIT_OK


def _export_heatmap(gmap: GlobalMap, stem: Path, args) -> list[Path]:
    """Encode the map queried at its center with a randomly initialized encoder."""
    profile = RobotProfile.parse(args.profile)
    grid = QUERY_GRIDS[profile]
    cx, cy = gmap.center
    pose = Pose.from_xyz_rpy(cx, cy, gmap.ground_height + STANDING_HEIGHT[profile], yaw=args.yaw)
    q = query(gmap, pose, grid)
    cfg = EncoderConfig(grid.rows, grid.cols, 4, seed=args.seed or 0)
    rng = np.random.default_rng(args.seed or 0)
    emb = encode(q.points, rng.standard_normal(cfg.d_pe), cfg)
    heat, mask = attention_heatmap(emb, cfg)
    paths = [io.write_pgm(Path(f"{stem}_attention.pgm"), heat, 0.0, float(heat.max())),
             io.write_pgm(Path(f"{stem}_global.pgm"), mask, 0.0, 1.0)]
    rows = [(i, j, repr(float(heat[i, j])), repr(float(mask[i, j]))) for i in range(cfg.length)
            for j in range(cfg.width)]
    paths.append(io.write_csv(Path(f"{stem}_attention.csv"), ("row", "col", "attention", "global"), rows))
    return paths


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neuralmap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (default: current)")
    common.add_argument("--config", help="key=value settings file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("terrain", parents=[common], help="generate one heightfield")
    p.add_argument("--family")
    p.add_argument("--difficulty", type=float)
    p.add_argument("--profile")
    p.add_argument("--floor", choices=["random", "physical", "virtual", "void"])
    p.add_argument("--resolution", type=float)
    p.set_defaults(func=cmd_terrain)

    p = sub.add_parser("dataset", parents=[common], help="synthesize training grids")
    p.add_argument("-n", "--count", type=int)
    p.add_argument("--profile")
    p.add_argument("--mix", help="Family=fraction,... (fractions sum to 1)")
    p.add_argument("--difficulty", type=float)
    p.add_argument("--poses-per-terrain", dest="poses_per_terrain", type=int)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", parents=[common], help="train the predictor")
    p.add_argument("--dataset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--resume", help="weights to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="L0.5 of trained weights and the baseline")
    p.add_argument("--weights")
    p.add_argument("--dataset")
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse-sim", parents=[common], help="closed-loop mapping along a scripted path")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one run setting")
    p.set_defaults(func=cmd_fuse_sim)

    p = sub.add_parser("export", parents=[common], help="convert a binary file to PGM/JSON/CSV")
    p.add_argument("input")
    p.add_argument("--heatmap", action="store_true", help="for maps: encoder attention heatmap")
    p.add_argument("--profile", default="QuadrupedA")
    p.add_argument("--yaw", type=float, default=0.0)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        args.config_values = read_config(args.config) if args.config else {}
        if args.seed is not None and args.command != "fuse-sim":
            args.config_values["seed"] = args.seed
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, io.FormatError, ShapeMismatch) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
