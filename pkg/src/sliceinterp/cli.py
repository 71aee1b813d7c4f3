"""Command-line entry point: ``sliceinterp <command> ...``.

Exit codes: 0 success, 2 config error, 3 checkpoint error, 4 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .diffusion import make_linear_schedule
from .metrics import fmt6, psnr, ssim, ssim_map, write_graymap, write_map_csv
from .training import (
    ablate_k,
    baseline_predictor,
    ddpm_predictor,
    evaluate,
    format_ablation_table,
    model_predictor,
    regime_of,
    train_architecture,
)
from .volume import (
    PhantomParams,
    TripletSample,
    Volume,
    VolumeFormatError,
    build_dataset,
    load_volume,
    phantom_cohort,
    save_volume,
)

EXIT_CONFIG, EXIT_CHECKPOINT, EXIT_DATA = 2, 3, 4


class DataError(ValueError):
    pass


# -- shared helpers ---------------------------------------------------------------------


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.scale is not None:
        cfg.scale = args.scale
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _load_volumes(cfg: ExperimentConfig) -> list[Volume]:
    if cfg.data.source == "directory":
        files = sorted(Path(cfg.data.volume_dir).glob("*.svol"))
        if not files:
            raise DataError(f"no .svol files in {cfg.data.volume_dir}")
        return [load_volume(f) for f in files]
    try:
        params = cfg.phantom_params()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"data.phantom: {exc}") from exc
    return phantom_cohort(cfg.data.n_volumes, params, cfg.data_seed)


def _dataset(cfg: ExperimentConfig, k: int | None = None, need=("train", "val")):
    vols = _load_volumes(cfg)
    try:
        ds = build_dataset(vols, k or cfg.data.k, tuple(cfg.data.split_ratios), cfg.data_seed, cfg.data.min_slices)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    empty = [name for name in need if not ds.splits[name]]
    if empty:
        raise DataError(f"empty split(s) {', '.join(empty)}: {ds.counts()}")
    return ds


def _resolve_arch_configs(cfg: ExperimentConfig, arch: str | None = None):
    try:
        return cfg.model_config(arch), cfg.train_config(arch)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid model/train settings: {exc}") from exc


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, newline="")


def _predictor_from_source(args):
    """(method name, predictor) from --baseline or --checkpoint."""
    if args.baseline:
        return args.baseline, baseline_predictor(args.baseline)
    try:
        model, mcfg, extra = load_checkpoint(args.checkpoint, args.arch)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    if regime_of(mcfg.arch) == "ddpm":
        schedule = make_linear_schedule(
            extra.get("diffusion_steps", 100), extra.get("beta1", 1e-4), extra.get("betaT", 0.02)
        )
        return mcfg.arch, ddpm_predictor(model, schedule, getattr(args, "eval_seed", 0))
    return mcfg.arch, model_predictor(model)


# -- commands ----------------------------------------------------------------------------------


def cmd_phantom(args) -> int:
    cfg = _config_from_args(args)
    overrides = {
        k: v
        for k, v in {
            "height": args.height,
            "width": args.width,
            "n_slices": args.slices,
            "n_blobs": args.blobs,
            "z_frequency": args.z_frequency,
            "noise_sigma": args.noise,
        }.items()
        if v is not None
    }
    try:
        params = PhantomParams(**{**cfg.data.phantom, **overrides})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"phantom parameters: {exc}") from exc
    n = args.n if args.n is not None else cfg.data.n_volumes
    out = _out_dir(cfg.output_dir)
    vols = phantom_cohort(n, params, cfg.seed)
    for v in vols:
        save_volume(v, out / f"{v.patient_id}.svol")
    manifest = {
        "master_seed": cfg.seed,
        "n_volumes": n,
        "params": {k: v for k, v in dataclasses.asdict(params).items() if k != "seed"},
        "patient_ids": [v.patient_id for v in vols],
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {n} volumes to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    if "arch" not in cfg.model:
        raise ConfigError(f"{args.config or '<defaults>'}: model.arch: required field missing")
    mcfg, tcfg = _resolve_arch_configs(cfg)
    ds = _dataset(cfg)
    out = _out_dir(cfg.output_dir)
    cfg.write_resolved(out)
    trained = train_architecture(
        mcfg, ds.splits["train"], ds.splits["val"], tcfg, checkpoint_path=out / "checkpoint.smdl",
        on_epoch=lambda r: print(f"epoch {r.epoch}: train {r.train_loss:.5f} val {r.val_loss:.5f}", flush=True),
    )
    trained.history.write_csv(out / "history.csv")
    _write(out / "history.txt", trained.history.summary() + "\n")
    _write(out / "splits.json", json.dumps(dataclasses.asdict(ds.manifest), indent=2) + "\n")
    print(f"best epoch {trained.history.best_epoch}; artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    if args.data:
        cfg.data.source, cfg.data.volume_dir = "directory", args.data
    k = args.k or cfg.data.k
    ds = _dataset(cfg, k, need=(cfg.eval.split,))
    method, predict = _predictor_from_source(args)
    out = _out_dir(cfg.output_dir)
    cfg.write_resolved(out, arch=None)
    report = evaluate(predict, ds.splits[cfg.eval.split], k, method)
    report.write_csv(out / f"{method}_k{k}_samples.csv")
    summary = report.header_line() + "\n" + report.summary_line() + "\n"
    _write(out / f"{method}_k{k}_summary.txt", summary)
    print(report.summary_line())
    return 0


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    vols = _load_volumes(cfg)
    out = _out_dir(cfg.output_dir)
    cfg.write_resolved(out)
    rows = []
    for arch in cfg.ablation.archs:
        mcfg, tcfg = _resolve_arch_configs(cfg, arch)
        try:
            arch_rows = ablate_k(
                mcfg, cfg.ablation.ks, vols, tcfg, cfg.data_seed, tuple(cfg.data.split_ratios), cfg.data.min_slices
            )
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        for row in arch_rows:
            row.report.write_csv(out / f"{arch}_k{row.k}_samples.csv")
            row.history.write_csv(out / f"{arch}_k{row.k}_history.csv")
            print(row.report.summary_line(), flush=True)
        rows += arch_rows
    table = format_ablation_table(rows)
    _write(out / "ablation.csv", table)
    print(table, end="")
    return 0


def interpolate_volume(volume: Volume, predict) -> Volume:
    """Insert one predicted slice between every adjacent pair: n slices -> 2n - 1."""
    if volume.n_slices < 2:
        raise ValueError("need at least two slices to interpolate")
    v = volume.voxels
    cond = np.stack([v[:-1], v[1:]], axis=1)
    pairs = [TripletSample(v[i], v[i + 1], None, 1, volume.patient_id, i) for i in range(len(cond))]
    mids = np.asarray(predict(cond, pairs), dtype=np.float32)[:, 0]
    out = np.empty((2 * volume.n_slices - 1, volume.height, volume.width), dtype=np.float32)
    out[0::2] = v
    out[1::2] = mids
    return Volume(volume.patient_id, out, volume.in_plane_mm, volume.slice_mm / 2)


def cmd_interpolate(args) -> int:
    volume = load_volume(args.volume)
    method, predict = _predictor_from_source(args)
    try:
        result = interpolate_volume(volume, predict)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    save_volume(result, args.out)
    print(f"{volume.n_slices} slices at {volume.slice_mm}mm -> {result.n_slices} slices at {result.slice_mm}mm")
    return 0


def _matching_volumes(path_a, path_b) -> tuple[Volume, Volume]:
    a, b = load_volume(path_a), load_volume(path_b)
    if a.voxels.shape != b.voxels.shape:
        raise DataError(f"volume extents differ: {a.voxels.shape} vs {b.voxels.shape}")
    return a, b


def cmd_metrics(args) -> int:
    a, b = _matching_volumes(args.a, args.b)
    lines = ["slice,psnr_db,ssim"]
    for i, (x, y) in enumerate(zip(a.voxels, b.voxels)):
        lines.append(f"{i},{fmt6(psnr(x, y))},{fmt6(ssim(x, y))}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_ssim_map(args) -> int:
    pred, target = _matching_volumes(args.pred, args.target)
    slices = range(pred.n_slices) if args.slice is None else [args.slice]
    out = _out_dir(args.out)
    for i in slices:
        if not 0 <= i < pred.n_slices:
            raise DataError(f"slice {i} outside 0..{pred.n_slices - 1}")
        m = ssim_map(pred.voxels[i], target.voxels[i])
        write_graymap(m, out / f"ssim_map_{i:03d}.pgm")
        if args.csv:
            write_map_csv(m, out / f"ssim_map_{i:03d}.csv")
    print(f"wrote {len(slices)} SSIM maps to {out}")
    return 0


# -- parser -------------------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1, deterministic)")
    p.add_argument("--scale", choices=("desk", "paper"), help="model width preset")


def _source(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint", help="SMDL1 checkpoint")
    g.add_argument("--baseline", choices=("linear", "nearest", "nearest_upper"))
    p.add_argument("--arch", help="expected architecture of the checkpoint")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sliceinterp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="write synthetic phantom volumes")
    _common(p)
    p.add_argument("--n", type=int, help="number of volumes")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--slices", type=int)
    p.add_argument("--blobs", type=int)
    p.add_argument("--z-frequency", type=float)
    p.add_argument("--noise", type=float)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="train one architecture")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or baseline on a split")
    _common(p)
    _source(p)
    p.add_argument("--data", help="directory of .svol volumes (overrides the config data section)")
    p.add_argument("--k", type=int)
    p.add_argument("--eval-seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train/evaluate each architecture at each gap k")
    _common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("interpolate", help="insert predicted slices between all adjacent pairs")
    _common(p)
    _source(p)
    p.add_argument("--volume", required=True)
    p.add_argument("--eval-seed", type=int, default=0)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("metrics", help="slice-wise PSNR/SSIM between two volumes")
    _common(p)
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("ssim-map", help="local SSIM maps as P5 graymaps")
    _common(p)
    p.add_argument("pred")
    p.add_argument("target")
    p.add_argument("--slice", type=int)
    p.add_argument("--csv", action="store_true", help="also write raw float maps as CSV")
    p.set_defaults(func=cmd_ssim_map)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (DataError, VolumeFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
