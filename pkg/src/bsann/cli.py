"""Command-line pipeline: dataset generation, both training stages,
evaluation, and filter export.

Every command writes a run manifest (config snapshot, seeds, input digests)
before doing heavy work, and is deterministic given identical inputs and
seeds. Exit codes: 0 success, 1 runtime error, 2 usage error. The
``BSANN_THREADS`` environment variable is equivalent to ``--threads``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import __version__
from .acoustics import HrtfConfig
from .core import FrequencyGrid
from .dataset import (
    SceneConfig,
    SceneRanges,
    build_sample,
    default_scene,
    read_dataset,
    sample_scene,
    with_reference_control_points,
    write_dataset,
)
from .errors import BsannError, ConfigurationError
from .losses import LossWeights
from .metrics import bank_to_impulses, compute_metrics, export_curves
from .net import PoseInput, forward, load_checkpoint, save_checkpoint
from .training import TrainConfig, train_psz, train_xtc

CONFIG_VERSION = 1


@dataclass
class RunSettings:
    """Validated contents of a run config file."""

    grid: FrequencyGrid = field(default_factory=FrequencyGrid)
    hrtf: HrtfConfig = field(default_factory=HrtfConfig)
    ranges: SceneRanges = field(default_factory=SceneRanges.pose_only)
    train_psz: TrainConfig = field(default_factory=lambda: TrainConfig(stage="psz"))
    train_xtc: TrainConfig = field(default_factory=lambda: TrainConfig(stage="xtc"))
    eval_mode: str = "physically_informed"
    raw: dict = field(default_factory=dict)


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigurationError(f"unknown config keys in {where}: {sorted(unknown)}")


def _train_config(stage: str, section: dict) -> TrainConfig:
    allowed = {
        "epochs", "batch_size", "learning_rate", "seed", "holdout_fraction",
        "patience", "num_bands", "fourier_sigma", "hidden_sizes", "weights",
    }
    _check_keys(section, allowed, f"train.{stage}")
    kwargs = dict(section)
    weights = kwargs.pop("weights", None)
    if "hidden_sizes" in kwargs:
        kwargs["hidden_sizes"] = tuple(int(x) for x in kwargs["hidden_sizes"])
    cfg = TrainConfig(stage=stage, **kwargs)
    if weights is not None:
        _check_keys(weights, set(LossWeights.__dataclass_fields__), f"train.{stage}.weights")
        cfg.weights = LossWeights.from_dict(weights)
    return cfg


def load_settings(path: str | None) -> RunSettings:
    """Parse and strictly validate a JSON config file (unknown keys are errors)."""
    if path is None:
        return RunSettings()
    with open(path) as fh:
        raw = json.load(fh)
    _check_keys(raw, {"version", "grid", "hrtf", "scene_ranges", "train", "eval"}, "config")
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigurationError(
            f"config version must be {CONFIG_VERSION}, got {raw.get('version')!r}"
        )
    settings = RunSettings(raw=raw)
    if "grid" in raw:
        _check_keys(
            raw["grid"],
            {"sample_rate_hz", "fft_size", "band_lo_hz", "band_hi_hz"},
            "grid",
        )
        settings.grid = FrequencyGrid.from_dict({**FrequencyGrid().to_dict(), **raw["grid"]})
    if "hrtf" in raw:
        _check_keys(raw["hrtf"], {"series_order", "convergence_tol"}, "hrtf")
        settings.hrtf = HrtfConfig(**raw["hrtf"])
    if "scene_ranges" in raw:
        _check_keys(
            raw["scene_ranges"], set(SceneRanges.__dataclass_fields__), "scene_ranges"
        )
        settings.ranges = SceneRanges.from_dict(raw["scene_ranges"])
    if "train" in raw:
        _check_keys(raw["train"], {"psz", "xtc"}, "train")
        if "psz" in raw["train"]:
            settings.train_psz = _train_config("psz", raw["train"]["psz"])
        if "xtc" in raw["train"]:
            settings.train_xtc = _train_config("xtc", raw["train"]["xtc"])
    if "eval" in raw:
        _check_keys(raw["eval"], {"mode"}, "eval")
        settings.eval_mode = raw["eval"].get("mode", "physically_informed")
    return settings


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_path: Path, command: str, args_dict: dict, settings: RunSettings,
                    inputs: list[str]) -> None:
    manifest = {
        "tool": "bsann",
        "tool_version": __version__,
        "command": command,
        "args": args_dict,
        "config": settings.raw or {"defaults": True},
        "grid": settings.grid.to_dict(),
        "input_hashes": {p: _sha256_file(p) for p in inputs if p and os.path.exists(p)},
    }
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _threads_from(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("BSANN_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def _build_scene_worker(payload):
    """Build one scene in a worker process; deterministic per (seed, index)."""
    index, master_seed, ranges_dict, grid_dict, hrtf_order, hrtf_tol, mode = payload
    grid = FrequencyGrid.from_dict(grid_dict)
    ranges = SceneRanges.from_dict(ranges_dict)
    cfg = HrtfConfig(series_order=hrtf_order, convergence_tol=hrtf_tol)
    scene = sample_scene([master_seed, index], ranges)
    sample = build_sample(scene, grid, cfg, mode)
    return index, sample


def cmd_gen_dataset(args) -> int:
    settings = load_settings(args.config)
    out = Path(args.out)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "gen-dataset",
        {"out": str(out), "count": args.count, "mode": args.mode, "seed": args.seed},
        settings,
        [args.config] if args.config else [],
    )
    threads = _threads_from(args)
    payloads = [
        (
            i, args.seed, settings.ranges.to_dict(), settings.grid.to_dict(),
            settings.hrtf.series_order, settings.hrtf.convergence_tol, args.mode,
        )
        for i in range(args.count)
    ]
    samples = [None] * args.count
    if threads > 1 and args.count > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for index, sample in pool.map(_build_scene_worker, payloads):
                samples[index] = sample
                print(f"[{index + 1}/{args.count}] built scene seed=({args.seed},{index})",
                      flush=True)
    else:
        for payload in payloads:
            index, sample = _build_scene_worker(payload)
            samples[index] = sample
            print(f"[{index + 1}/{args.count}] built scene seed=({args.seed},{index})",
                  flush=True)
    write_dataset(out, samples, settings.grid, settings.ranges, args.mode)
    print(f"wrote {args.count} scenes to {out}")
    return 0


def cmd_train(args, parser) -> int:
    settings = load_settings(args.config)
    if args.stage == "xtc" and not args.teacher:
        parser.error("--stage xtc requires --teacher CKPT")
    out = Path(args.out)
    inputs = [args.dataset] + ([args.config] if args.config else [])
    if args.teacher:
        inputs.append(args.teacher)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "train",
        {"stage": args.stage, "dataset": args.dataset, "out": str(out),
         "teacher": args.teacher},
        settings,
        inputs,
    )
    samples, grid, header = read_dataset(args.dataset)
    config = settings.train_psz if args.stage == "psz" else settings.train_xtc
    pose_bounds = None
    if header.get("ranges"):
        pose_bounds = SceneRanges.from_dict(header["ranges"]).pose_bounds()
    if args.stage == "psz":
        params, history = train_psz(samples, grid, config, pose_bounds=pose_bounds)
    else:
        teacher, _ = load_checkpoint(args.teacher)
        params, history = train_xtc(samples, grid, teacher, config)
    hyper = {
        "stage": args.stage,
        "grid": grid.to_dict(),
        "weights": config.weights.to_dict(),
        "dataset_sha256": _sha256_file(args.dataset),
    }
    save_checkpoint(params, out, hyper=hyper)
    log_path = out.with_suffix(out.suffix + ".log.jsonl")
    with open(log_path, "w") as fh:
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"trained stage {args.stage}: {len(history)} epochs, "
          f"final loss {history[-1]['loss']:.6g}; checkpoint at {out}")
    return 0


def cmd_eval(args, parser) -> int:
    if not args.default_scene and not args.scene:
        parser.error("provide --scene PATH or --default-scene")
    settings = load_settings(args.config)
    if not os.path.exists(args.ckpt):
        parser.error(f"checkpoint not found: {args.ckpt}")
    params, hyper = load_checkpoint(args.ckpt)
    grid = FrequencyGrid.from_dict(hyper["grid"]) if "grid" in hyper else settings.grid
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(
        out_dir / "manifest.json",
        "eval",
        {"ckpt": args.ckpt, "scene": args.scene, "default_scene": args.default_scene,
         "out": str(out_dir)},
        settings,
        [args.ckpt] + ([args.scene] if args.scene else [])
        + ([args.config] if args.config else []),
    )
    if args.default_scene:
        scene = default_scene()
    else:
        with open(args.scene) as fh:
            scene = SceneConfig.from_dict(json.load(fh))
    plant_scene = with_reference_control_points(scene)
    sample = build_sample(plant_scene, grid, settings.hrtf, settings.eval_mode)
    bank = forward(params, sample.pose, grid).values
    curves = compute_metrics(sample.atf, bank, grid)
    csv_path = out_dir / "metrics.csv"
    export_curves(curves, csv_path, out_dir / "metrics_means.json")
    for name, value in sorted(curves.means_db.items()):
        print(f"{name[:-3].upper()}: {value:+.2f} dB (log-weighted mean)")
    print(f"curves written to {csv_path}")
    return 0


def cmd_export_filters(args, parser) -> int:
    try:
        parts = [float(x) for x in args.pose.split(",")]
        if len(parts) != 4:
            raise ValueError
    except ValueError:
        parser.error(f"--pose must be 'x1,y1,x2,y2', got {args.pose!r}")
    if not os.path.exists(args.ckpt):
        parser.error(f"checkpoint not found: {args.ckpt}")
    settings = load_settings(args.config)
    params, hyper = load_checkpoint(args.ckpt)
    grid = FrequencyGrid.from_dict(hyper["grid"]) if "grid" in hyper else settings.grid
    out = Path(args.out)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "export-filters",
        {"ckpt": args.ckpt, "pose": args.pose, "out": str(out)},
        settings,
        [args.ckpt] + ([args.config] if args.config else []),
    )
    pose = PoseInput((parts[0], parts[1]), (parts[2], parts[3]))
    bank = forward(params, pose, grid).values
    impulses = bank_to_impulses(bank, grid)  # (L, 4, fft)
    n_drivers = impulses.shape[0]
    frames = impulses.reshape(n_drivers * 4, grid.fft_size).T.astype(np.float32)
    wavfile.write(out, int(grid.sample_rate_hz), frames)
    channel_map = [
        {"channel": 4 * l + p, "loudspeaker": l, "program": p}
        for l in range(n_drivers)
        for p in range(4)
    ]
    meta = {
        "pose": parts,
        "grid": grid.to_dict(),
        "channel_order": "loudspeaker-major",
        "channel_map": channel_map,
    }
    with open(out.with_suffix(out.suffix + ".json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    print(f"exported {n_drivers * 4} impulse responses to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bsann",
        description="Personal-sound-zone filter pipeline: dataset generation, "
        "two-stage training, evaluation, and filter export.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap (or set BSANN_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-dataset", help="simulate and serialize training scenes")
    g.add_argument("--config", default=None)
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--mode", choices=("point_source", "physically_informed"),
                   default="physically_informed")
    g.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--stage", choices=("psz", "xtc"), required=True)
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--teacher", default=None)
    t.add_argument("--config", default=None)

    e = sub.add_parser("eval", help="compute isolation/crosstalk metrics")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--scene", default=None)
    e.add_argument("--default-scene", action="store_true")
    e.add_argument("--out", required=True)
    e.add_argument("--config", default=None)

    x = sub.add_parser("export-filters", help="write filter impulse responses as WAV")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--pose", required=True, help="x1,y1,x2,y2 in meters")
    x.add_argument("--out", required=True)
    x.add_argument("--config", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-dataset":
            return cmd_gen_dataset(args)
        if args.command == "train":
            return cmd_train(args, parser)
        if args.command == "eval":
            return cmd_eval(args, parser)
        if args.command == "export-filters":
            return cmd_export_filters(args, parser)
        parser.error(f"unknown command {args.command}")
    except BsannError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
