"""Command-line surface: scene synthesis, segmentation, detection,
evaluation, and parameter sweeps.

Every run writes a ``manifest.json`` next to its outputs with the resolved
configuration, inputs, outputs, seed, and tool version, which is enough to
reproduce the artifacts bit for bit. ``SUPERAD_THREADS`` caps how many
sweep cells run concurrently (0 or unset means auto).
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .io import (
    GroundTruth,
    HsiCube,
    SceneSpec,
    load_cube,
    load_map_csv,
    load_mask,
    save_cube,
    save_map_csv,
    save_map_pgm,
    save_mask,
    synth_scene,
)
from .metrics import evaluate, roc_curve
from .model import AdaConvConfig
from .obpm import ObpmConfig
from .rxd import fit_stats, rxd_detect
from .superpixel import slic_segment
from .trainer import TrainConfig, save_model, train

__all__ = ["main"]


def thread_cap() -> int:
    raw = os.environ.get("SUPERAD_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"SUPERAD_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("SUPERAD_THREADS must be non-negative")
    return n if n > 0 else (os.cpu_count() or 1)


def _write_manifest(out_dir: Path, payload: dict) -> None:
    payload = dict(payload)
    payload["version"] = __version__
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=args.seed,
        segments=args.segments,
        adaconv=AdaConvConfig(n=args.window, k=args.kernel),
        obpm=ObpmConfig(alpha=args.alpha, beta=args.beta),
        loss_kind=args.loss,
        perturbation=args.perturbation,
    )


def _config_dict(config: TrainConfig) -> dict:
    return {
        "epochs": config.epochs,
        "lr": config.learning_rate,
        "adam_beta1": config.adam_beta1,
        "adam_beta2": config.adam_beta2,
        "adam_eps": config.adam_eps,
        "seed": config.seed,
        "segments": config.segments,
        "window": config.adaconv.n,
        "kernel": config.adaconv.k,
        "alpha": config.obpm.alpha,
        "beta": config.obpm.beta,
        "log_every": config.log_every,
        "loss": config.loss_kind,
        "perturbation": config.perturbation,
    }


def _add_detect_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--segments", type=int, default=100, help="SLIC target segment count")
    p.add_argument("--window", type=int, default=9, help="adaptive convolution window size n")
    p.add_argument("--kernel", type=int, default=3, help="adaptive convolution kernel size k")
    p.add_argument("--alpha", type=float, default=1.0, help="mining loss minimum gradient")
    p.add_argument("--beta", type=float, default=1.0, help="mining loss exponential rate")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss", choices=["obpm", "l1", "l2"], default="obpm")
    p.add_argument("--perturbation", choices=["spp", "none"], default="spp")


def cmd_synth(args) -> int:
    spec = SceneSpec(
        h=args.height,
        w=args.width,
        c=args.bands,
        endmember_count=args.endmembers,
        anomaly_rate=args.rate,
        anomaly_contrast=args.contrast,
        smoothness=args.smoothness,
        seed=args.seed,
    )
    cube, gt = synth_scene(spec)
    out = _out_dir(args)
    save_cube(cube, out / "scene.hsi")
    save_mask(gt, out / "gt.pgm")
    _write_manifest(
        out,
        {
            "subcommand": "synth",
            "config": {
                "height": spec.h,
                "width": spec.w,
                "bands": spec.c,
                "endmembers": spec.endmember_count,
                "rate": spec.anomaly_rate,
                "contrast": spec.anomaly_contrast,
                "smoothness": spec.smoothness,
            },
            "seed": spec.seed,
            "inputs": {},
            "outputs": ["scene.hsi", "gt.pgm"],
        },
    )
    return 0


def cmd_segment(args) -> int:
    cube = load_cube(args.input)
    labels = slic_segment(cube, args.segments, args.compactness)
    out = _out_dir(args)
    with open(out / "labels.csv", "w", encoding="ascii") as f:
        for row in labels.label:
            f.write(",".join(str(int(v)) for v in row))
            f.write("\n")
    _write_manifest(
        out,
        {
            "subcommand": "segment",
            "config": {"segments": args.segments, "compactness": args.compactness},
            "seed": None,
            "inputs": {"input": str(args.input)},
            "outputs": ["labels.csv"],
        },
    )
    return 0


def _write_epochs_csv(path: Path, logs) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write("epoch,loss,retained_fraction,auc\n")
        for entry in logs:
            auc_field = "" if entry.auc is None else repr(entry.auc)
            f.write(f"{entry.epoch},{entry.loss!r},{entry.retained_fraction!r},{auc_field}\n")


def cmd_detect(args) -> int:
    cube = load_cube(args.input)
    gt = load_mask(args.gt) if args.gt else None
    out = _out_dir(args)
    config = _train_config(args)

    if args.method == "rxd":
        amap = rxd_detect(cube, fit_stats(cube))
        outputs = ["map.csv", "map.pgm"]
    else:
        result = train(cube, config, gt=gt)
        amap = result.anomaly_map
        save_model(result.model, out / "model.sadm")
        _write_epochs_csv(out / "epochs.csv", result.logs)
        outputs = ["map.csv", "map.pgm", "model.sadm", "epochs.csv"]

    save_map_csv(amap, out / "map.csv")
    save_map_pgm(amap, out / "map.pgm")
    _write_manifest(
        out,
        {
            "subcommand": "detect",
            "method": args.method,
            "config": _config_dict(config),
            "seed": args.seed,
            "inputs": {"input": str(args.input), "gt": str(args.gt) if args.gt else None},
            "outputs": outputs,
        },
    )
    return 0


def cmd_eval(args) -> int:
    amap = load_map_csv(args.map)
    gt = load_mask(args.gt)
    report = evaluate(amap, gt)
    curve = roc_curve(amap, gt)
    out = _out_dir(args)
    with open(out / "metrics.json", "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out / "roc.csv", "w", encoding="ascii") as f:
        f.write("tau,pd,pf\n")
        for tau, pd, pf in zip(curve.thresholds, curve.pd, curve.pf):
            f.write(f"{tau!r},{pd!r},{pf!r}\n")
    _write_manifest(
        out,
        {
            "subcommand": "eval",
            "config": {},
            "seed": None,
            "inputs": {"map": str(args.map), "gt": str(args.gt)},
            "outputs": ["metrics.json", "roc.csv"],
        },
    )
    return 0


_GRID_PARSERS = {
    "segments": int,
    "window": int,
    "kernel": int,
    "alpha": float,
    "beta": float,
    "epochs": int,
    "lr": float,
    "seed": int,
    "loss": str,
    "perturbation": str,
}


def _parse_grid(grid_flags) -> list[tuple[str, list]]:
    axes = []
    for flag in grid_flags:
        if "=" not in flag:
            raise ValueError(f"--grid expects param=v1,v2,..., got {flag!r}")
        name, _, rest = flag.partition("=")
        name = name.strip()
        if name not in _GRID_PARSERS:
            raise ValueError(f"unknown sweep parameter {name!r}; choose from {sorted(_GRID_PARSERS)}")
        values = [_GRID_PARSERS[name](v.strip()) for v in rest.split(",") if v.strip()]
        if not values:
            raise ValueError(f"--grid {name!r} lists no values")
        axes.append((name, values))
    return axes


def _run_cell(cube: HsiCube, gt: GroundTruth, base: TrainConfig, overrides: dict) -> tuple[float, float, float]:
    cfg = TrainConfig(
        epochs=int(overrides.get("epochs", base.epochs)),
        learning_rate=float(overrides.get("lr", base.learning_rate)),
        seed=int(overrides.get("seed", base.seed)),
        segments=int(overrides.get("segments", base.segments)),
        adaconv=AdaConvConfig(
            n=int(overrides.get("window", base.adaconv.n)),
            k=int(overrides.get("kernel", base.adaconv.k)),
        ),
        obpm=ObpmConfig(
            alpha=float(overrides.get("alpha", base.obpm.alpha)),
            beta=float(overrides.get("beta", base.obpm.beta)),
        ),
        loss_kind=str(overrides.get("loss", base.loss_kind)),
        perturbation=str(overrides.get("perturbation", base.perturbation)),
    )
    started = time.perf_counter()
    result = train(cube, cfg)
    report = evaluate(result.anomaly_map, gt)
    return report.auc, report.snpr_db, time.perf_counter() - started


def cmd_ablate(args) -> int:
    cube = load_cube(args.input)
    gt = load_mask(args.gt)
    base = _train_config(args)
    axes = _parse_grid(args.grid)
    names = [name for name, _ in axes]
    cells = list(itertools.product(*(values for _, values in axes)))

    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        futures = [
            pool.submit(_run_cell, cube, gt, base, dict(zip(names, cell))) for cell in cells
        ]
        results = [f.result() for f in futures]

    out = _out_dir(args)
    with open(out / "sweep.csv", "w", encoding="ascii") as f:
        f.write(",".join(names + ["auc", "snpr_db", "runtime_s"]) + "\n")
        for cell, (cell_auc, cell_snpr, runtime) in zip(cells, results):
            values = [str(v) for v in cell]
            f.write(",".join(values + [repr(cell_auc), repr(cell_snpr), f"{runtime:.3f}"]) + "\n")
    _write_manifest(
        out,
        {
            "subcommand": "ablate",
            "config": _config_dict(base),
            "grid": {name: values for name, values in axes},
            "seed": args.seed,
            "inputs": {"input": str(args.input), "gt": str(args.gt)},
            "outputs": ["sweep.csv"],
        },
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="superad",
        description="Self-supervised hyperspectral anomaly detection toolkit",
    )
    parser.add_argument("--version", action="version", version=f"superad {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene and ground truth")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--bands", type=int, default=32)
    p.add_argument("--endmembers", type=int, default=4)
    p.add_argument("--rate", type=float, default=0.005, help="anomaly pixel fraction")
    p.add_argument("--contrast", type=float, default=0.12, help="min spectral angle (rad)")
    p.add_argument("--smoothness", type=float, default=6.0, help="abundance low-pass radius")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="superpixel-segment a cube to labels.csv")
    p.add_argument("--input", required=True)
    p.add_argument("--segments", type=int, default=100)
    p.add_argument("--compactness", type=float, default=0.1)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("detect", help="run a detector over a cube")
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=["superad", "rxd"], default="superad")
    p.add_argument("--gt", default=None, help="optional mask for per-epoch AUC logging")
    _add_detect_flags(p)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score a saved map against ground truth")
    p.add_argument("--map", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep detector parameters on a scene")
    p.add_argument("--input", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument(
        "--grid",
        action="append",
        required=True,
        metavar="param=v1,v2,...",
        help="sweep axis; repeat for a Cartesian product",
    )
    _add_detect_flags(p)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, np.linalg.LinAlgError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
