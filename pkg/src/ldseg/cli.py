"""Command-line entry point.

Subcommands: generate-data, train-stage1, train-stage2, infer, eval, ablate,
plot. Config precedence is defaults < --config JSON < explicit flags. Exit
codes: 0 success, 2 usage/config/validation, 3 I/O, 4 missing state,
5 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import RunConfig, resolve_config
from .data import CLASS_NAMES, generate_dataset, load_dataset, load_eval_labels
from .diffusion import build_linear_schedule
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    InputError,
    MetricError,
    NumericError,
    StateError,
)
from .metrics import ConfusionMatrix, write_metrics
from .plots import (
    colorize_labels,
    plot_ablation_bars,
    plot_loss_curves,
    plot_panels,
    read_loss_csv,
)
from .train import final_checkpoint, load_inference_model, train_stage1, train_stage2
from .uda import derive_seed, infer

# ablation cells in the summary's fixed row order
ABLATION_CELLS = ("no_conn_s1", "no_conn_s1s2", "conn_s1", "conn_s1s2")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None, help="global seed (default 0)")
    p.add_argument("--dataset", type=str, default=None, help="dataset root directory")
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--batch-size", type=int, default=None, help="batch size (default 2)")
    p.add_argument("--lr", type=float, default=None, help="initial learning rate (default 6e-5)")
    p.add_argument("--timesteps", type=int, default=None, help="diffusion steps T (default 1000)")
    p.add_argument("--ddim-steps", type=int, default=None, help="reverse steps at inference (default 50)")
    p.add_argument("--ema-alpha", type=float, default=None, help="EMA decay (default 0.999)")
    p.add_argument("--lambda-adv", type=float, default=None, help="adversarial loss weight (default 0.1)")
    p.add_argument("--image-size", type=int, default=None, help="image side length (default 64)")
    p.add_argument("--num-classes", type=int, default=None, help="class count (default 5)")
    p.add_argument("--stage1-epochs", type=int, default=None, help="stage-1 epochs (default 10)")
    p.add_argument("--stage1-warmup-epochs", type=int, default=None, help="source-only epochs (default 2)")
    p.add_argument("--stage2-epochs", type=int, default=None, help="stage-2 epochs (default 5)")
    p.add_argument(
        "--intercoder", choices=("on", "off"), default=None,
        help="long encoder-decoder skip connections (default on)",
    )


_FLAG_TO_FIELD = {
    "seed": "seed",
    "dataset": "dataset",
    "out": "out",
    "batch_size": "batch_size",
    "lr": "lr",
    "timesteps": "timesteps",
    "ddim_steps": "ddim_steps",
    "ema_alpha": "ema_alpha",
    "lambda_adv": "lambda_adv",
    "image_size": "image_size",
    "num_classes": "num_classes",
    "stage1_epochs": "stage1_epochs",
    "stage1_warmup_epochs": "stage1_warmup_epochs",
    "stage2_epochs": "stage2_epochs",
}


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for flag, field in _FLAG_TO_FIELD.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    if getattr(args, "intercoder", None) is not None:
        overrides["use_intercoder"] = args.intercoder == "on"
    return resolve_config(args.config, overrides)


def cmd_generate_data(args: argparse.Namespace) -> int:
    if args.n_train < 0 or args.n_val < 0:
        raise ConfigError("--n-train/--n-val must be nonnegative")
    manifest = generate_dataset(
        args.root, args.n_train, args.n_val, args.seed, image_size=args.image_size
    )
    print(f"wrote dataset under {args.root}: {json.dumps(manifest['counts'])}")
    return 0


def cmd_train_stage1(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if not cfg.dataset:
        raise ConfigError("--dataset is required")
    if not cfg.out:
        raise ConfigError("--out is required")
    path = train_stage1(cfg, cfg.out, resume=args.resume)
    print(f"stage-1 finished; final checkpoint at {path}")
    return 0


def cmd_train_stage2(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if not cfg.dataset:
        raise ConfigError("--dataset is required")
    if not cfg.out:
        raise ConfigError("--out is required")
    ckpt = _resolve_checkpoint(Path(args.stage1))
    path = train_stage2(cfg, cfg.out, ckpt, resume=args.resume)
    print(f"stage-2 finished; final checkpoint at {path}")
    return 0


def _resolve_checkpoint(path: Path) -> Path:
    """Accept either a checkpoint directory or a run directory."""
    if (path / "manifest.json").is_file():
        return path
    if (path / "checkpoints").is_dir():
        return final_checkpoint(path)
    raise StateError(f"no checkpoint found at {path}")


def _load_run_config(args: argparse.Namespace, ckpt: Path) -> RunConfig:
    """Config for inference: --config wins, else the run's resolved config."""
    if args.config:
        return _config_from_args(args)
    for candidate in (ckpt.parent.parent / "config.json", ckpt.parent / "config.json"):
        if candidate.is_file():
            loaded = RunConfig.load(candidate)
            merged = argparse.Namespace(**vars(args))
            merged.config = str(candidate)
            return _config_from_args(merged)
    return _config_from_args(args)


def _infer_split(model, cfg: RunConfig, items, seed: int, batch: int = 8):
    """name -> predicted label map; the noise for each image depends only on
    (seed, image name), never on batching."""
    sched = build_linear_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)
    arch = cfg.arch()
    lat_shape = (cfg.latent_channels, arch.latent_size, arch.latent_size)
    preds = {}
    for lo in range(0, len(items), batch):
        chunk = items[lo : lo + batch]
        x = torch.stack([it.image for it in chunk])
        noise = torch.stack(
            [
                torch.randn(
                    lat_shape,
                    generator=torch.Generator().manual_seed(derive_seed(seed, "infer", it.name)),
                )
                for it in chunk
            ]
        )
        pred = infer(x, model, sched, n_ddim=cfg.ddim_steps, noise=noise)
        for it, p in zip(chunk, pred):
            preds[it.name] = p
    return preds


def cmd_infer(args: argparse.Namespace) -> int:
    ckpt = _resolve_checkpoint(Path(args.ckpt))
    cfg = _load_run_config(args, ckpt)
    model = load_inference_model(ckpt, cfg)
    items = load_dataset(args.dataset or cfg.dataset, args.split, args.domain, cfg.num_classes)
    if args.limit:
        items = items[: args.limit]
    out = Path(args.out or cfg.out)
    pred_dir = out / "pred"
    overlay_dir = out / "overlay"
    pred_dir.mkdir(parents=True, exist_ok=True)
    overlay_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if args.seed is None else args.seed
    preds = _infer_split(model, cfg, items, seed)
    for it in items:
        pred = preds[it.name].numpy().astype(np.uint8)
        Image.fromarray(pred, mode="L").save(pred_dir / f"{it.name}.png")
        img = (it.image.numpy().transpose(1, 2, 0) * 255).astype(np.uint8)
        color = colorize_labels(pred.astype(np.int64), cfg.num_classes)
        overlay = (0.55 * img + 0.45 * color).astype(np.uint8)
        Image.fromarray(overlay, mode="RGB").save(overlay_dir / f"{it.name}.png")
    print(f"wrote {len(items)} predictions to {pred_dir}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    num_classes = args.num_classes or 5
    labels = load_eval_labels(args.dataset, args.split, args.domain, num_classes)
    if not labels:
        raise DataError(f"no ground-truth labels for {args.domain}/{args.split}")
    pred_dir = Path(args.pred)
    cm = ConfusionMatrix(num_classes)
    for name, gt in labels.items():
        pred_path = pred_dir / f"{name}.png"
        if not pred_path.is_file():
            raise DataError(f"missing prediction file {pred_path}")
        with Image.open(pred_path) as im:
            pred = np.asarray(im, dtype=np.int64)
        cm.accumulate(pred, gt.numpy())
    payload = write_metrics(args.out, cm, list(CLASS_NAMES[:num_classes]))
    print(f"mIoU {payload['miou']:.1f} over {len(labels)} images -> {args.out}")
    return 0


def _eval_checkpoint(
    ckpt: Path, cfg: RunConfig, dataset: str, out_dir: Path, seed: int
) -> float:
    """Inference plus scoring on target/val; returns mIoU."""
    model = load_inference_model(ckpt, cfg)
    items = load_dataset(dataset, "val", "target", cfg.num_classes)
    preds = _infer_split(model, cfg, items, seed)
    labels = load_eval_labels(dataset, "val", "target", cfg.num_classes)
    cm = ConfusionMatrix(cfg.num_classes)
    pred_dir = out_dir / "pred"
    pred_dir.mkdir(parents=True, exist_ok=True)
    for name, gt in labels.items():
        pred = preds[name].numpy()
        Image.fromarray(pred.astype(np.uint8), mode="L").save(pred_dir / f"{name}.png")
        cm.accumulate(pred, gt.numpy())
    payload = write_metrics(out_dir, cm, list(CLASS_NAMES[: cfg.num_classes]))
    return float(payload["miou"])


def cmd_ablate(args: argparse.Namespace) -> int:
    base_cfg = _config_from_args(args)
    if not base_cfg.dataset:
        raise ConfigError("--dataset is required")
    out = Path(args.out or base_cfg.out)
    if not out:
        raise ConfigError("--out is required")
    rows = []
    cells: dict[str, list[float]] = {name: [] for name in ABLATION_CELLS}
    for conn in (False, True):
        conn_name = "conn" if conn else "no_conn"
        for k in range(args.seeds):
            cfg = RunConfig.from_dict(base_cfg.to_dict())
            cfg.use_intercoder = conn
            cfg.seed = base_cfg.seed + k
            run_dir = out / conn_name / f"seed_{k}"
            print(f"[ablate] {conn_name} seed {cfg.seed}: stage 1")
            s1_ckpt = train_stage1(cfg, run_dir / "stage1")
            miou_s1 = _eval_checkpoint(
                s1_ckpt, cfg, cfg.dataset, run_dir / "eval_s1", cfg.seed
            )
            cells[f"{conn_name}_s1"].append(miou_s1)
            rows.append([f"{conn_name}_s1", conn_name, "stage1", cfg.seed, miou_s1])
            print(f"[ablate] {conn_name} seed {cfg.seed}: stage-1 mIoU {miou_s1:.1f}; stage 2")
            s2_ckpt = train_stage2(cfg, run_dir / "stage2", s1_ckpt)
            miou_s2 = _eval_checkpoint(
                s2_ckpt, cfg, cfg.dataset, run_dir / "eval_s1s2", cfg.seed
            )
            cells[f"{conn_name}_s1s2"].append(miou_s2)
            rows.append([f"{conn_name}_s1s2", conn_name, "stage1+2", cfg.seed, miou_s2])
            print(f"[ablate] {conn_name} seed {cfg.seed}: stage-1+2 mIoU {miou_s2:.1f}")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cell", "connection", "stages", "seed", "miou"])
        order = {name: i for i, name in enumerate(ABLATION_CELLS)}
        for row in sorted(rows, key=lambda r: (order[r[0]], r[3])):
            w.writerow(row)
    from .models import build_models, count_params

    decoder_params = {}
    for conn in (False, True):
        arm = RunConfig.from_dict(base_cfg.to_dict())
        arm.use_intercoder = conn
        decoder_params["conn" if conn else "no_conn"] = count_params(
            build_models(arm.arch(), seed=0).decoder
        )
    summary = {
        "order": list(ABLATION_CELLS),
        "cells": {
            name: {"per_seed": vals, "mean": float(np.mean(vals))}
            for name, vals in cells.items()
        },
        "decoder_params": decoder_params,
    }
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    plot_ablation_bars(
        {name: summary["cells"][name]["mean"] for name in ABLATION_CELLS},
        out / "ablation.png",
    )
    for name in ABLATION_CELLS:
        print(f"{name}: mean mIoU {summary['cells'][name]['mean']:.1f}")
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    if args.loss_csv:
        written = plot_loss_curves(args.loss_csv, args.out)
        print(f"wrote {len(written)} loss plots to {args.out}")
    if args.pred:
        items = load_dataset(args.dataset, args.split, args.domain)
        labels = load_eval_labels(args.dataset, args.split, args.domain)
        rows = []
        for it in items[: args.n]:
            pred_path = Path(args.pred) / f"{it.name}.png"
            if not pred_path.is_file():
                raise DataError(f"missing prediction file {pred_path}")
            with Image.open(pred_path) as im:
                pred = np.asarray(im, dtype=np.int64)
            gt = labels.get(it.name)
            rows.append((it.image.numpy(), None if gt is None else gt.numpy(), pred))
        path = plot_panels(rows, Path(args.out) / "panels.png", num_classes=len(CLASS_NAMES))
        print(f"wrote {path}")
    if not args.loss_csv and not args.pred:
        raise ConfigError("nothing to plot: pass --loss-csv and/or --pred")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldseg",
        description="Latent-diffusion semantic segmentation with two-stage "
        "unsupervised domain adaptation, on a procedural toy benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write the procedural two-domain dataset")
    p.add_argument("--root", required=True, help="dataset root to create")
    p.add_argument("--n-train", type=int, default=500, help="training images per domain")
    p.add_argument("--n-val", type=int, default=100, help="validation images per domain")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--image-size", type=int, default=64, help="image side length")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train-stage1", help="segmentation self-training on encoder/decoder")
    _add_config_flags(p)
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    p.set_defaults(func=cmd_train_stage1)

    p = sub.add_parser("train-stage2", help="adversarial diffusion training on the UNet")
    _add_config_flags(p)
    p.add_argument("--stage1", required=True, help="stage-1 run or checkpoint directory")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    p.set_defaults(func=cmd_train_stage2)

    p = sub.add_parser("infer", help="predict label maps with the EMA model")
    _add_config_flags(p)
    p.add_argument("--ckpt", required=True, help="checkpoint (or run) directory")
    p.add_argument("--domain", choices=("source", "target"), default="target")
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--limit", type=int, default=0, help="cap the number of images")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="directory of predicted label PNGs")
    p.add_argument("--dataset", required=True, help="dataset root")
    p.add_argument("--domain", choices=("source", "target"), default="target")
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--num-classes", type=int, default=5)
    p.add_argument("--out", required=True, help="directory for metrics.json/csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="2x2 grid: skip connections x training stages")
    _add_config_flags(p)
    p.add_argument("--seeds", type=int, default=3, help="independent seeds per cell")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="loss curves and qualitative panels")
    p.add_argument("--loss-csv", default=None, help="per-step loss CSV to plot")
    p.add_argument("--pred", default=None, help="prediction dir for panels")
    p.add_argument("--dataset", default=None, help="dataset root (for panels)")
    p.add_argument("--domain", choices=("source", "target"), default="target")
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--n", type=int, default=4, help="panel rows")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, InputError, ContractError, MetricError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 3
    except StateError as e:
        print(f"state error: {e}", file=sys.stderr)
        return 4
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    raise SystemExit(main())
