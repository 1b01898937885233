"""Stage trainers and run-level persistence.

A run directory holds the resolved config, an append-only per-step loss CSV
(step, component, value), and one checkpoint per epoch. All randomness
derives from (seed, stage, epoch, step) through ``derive_seed``, so a run is
reproducible bit-for-bit on one platform regardless of interruptions or
worker counts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import Tensor

from . import checkpoint as ckpt
from .config import RunConfig
from .data import load_dataset
from .diffusion import build_linear_schedule
from .errors import StateError
from .models import build_models
from .uda import (
    ModelPair,
    SegModel,
    InferenceModel,
    build_mixed_images,
    derive_seed,
    stage1_step,
    stage2_step,
)


@dataclass
class TrainBundle:
    """Everything trainable for one run: the segmentation pair, the UNet pair,
    and the discriminator."""

    seg_pair: ModelPair
    unet_pair: ModelPair
    disc: torch.nn.Module


def new_bundle(cfg: RunConfig) -> TrainBundle:
    ms = build_models(cfg.arch(), cfg.seed)
    seg = SegModel(ms.encoder, ms.decoder)
    return TrainBundle(
        seg_pair=ModelPair(seg, cfg.ema_alpha),
        unet_pair=ModelPair(ms.unet, cfg.ema_alpha),
        disc=ms.disc,
    )


def bundle_arrays(bundle: TrainBundle) -> dict:
    arrays = {}
    arrays.update(ckpt.module_arrays(bundle.seg_pair.online, "online/seg"))
    arrays.update(ckpt.module_arrays(bundle.seg_pair.ema, "ema/seg"))
    arrays.update(ckpt.module_arrays(bundle.unet_pair.online, "online/unet"))
    arrays.update(ckpt.module_arrays(bundle.unet_pair.ema, "ema/unet"))
    arrays.update(ckpt.module_arrays(bundle.disc, "online/disc"))
    return arrays


def save_bundle(
    path: Path,
    bundle: TrainBundle,
    cfg: RunConfig,
    stage: str,
    epoch: int,
    step: int,
    optimizers: dict[str, tuple[torch.optim.Optimizer, torch.nn.Module]] | None = None,
) -> None:
    arrays = bundle_arrays(bundle)
    opt_steps: dict[str, int] = {}
    for name, (opt, module) in (optimizers or {}).items():
        opt_arrays, steps = ckpt.optimizer_arrays(opt, module, f"opt/{name}")
        arrays.update(opt_arrays)
        opt_steps.update(steps)
    meta = {
        "stage": stage,
        "epoch": epoch,
        "step": step,
        "config_hash": cfg.config_hash(),
        "opt_steps": opt_steps,
    }
    ckpt.save_checkpoint(path, arrays, meta)


def load_bundle(path: Path, cfg: RunConfig) -> tuple[TrainBundle, dict, dict]:
    """Rebuild a full bundle from a checkpoint; returns (bundle, arrays, meta)."""
    arrays, meta = ckpt.load_checkpoint(path)
    bundle = new_bundle(cfg)
    ckpt.load_module_arrays(bundle.seg_pair.online, "online/seg", arrays)
    ckpt.load_module_arrays(bundle.seg_pair.ema, "ema/seg", arrays)
    ckpt.load_module_arrays(bundle.unet_pair.online, "online/unet", arrays)
    ckpt.load_module_arrays(bundle.unet_pair.ema, "ema/unet", arrays)
    ckpt.load_module_arrays(bundle.disc, "online/disc", arrays)
    return bundle, arrays, meta


def load_inference_model(path: Path, cfg: RunConfig) -> InferenceModel:
    """Build the deployment model from the EMA namespaces only."""
    arrays, _ = ckpt.load_checkpoint(path)
    ms = build_models(cfg.arch(), cfg.seed)
    seg = SegModel(ms.encoder, ms.decoder)
    ckpt.load_module_arrays(seg, "ema/seg", arrays)
    ckpt.load_module_arrays(ms.unet, "ema/unet", arrays)
    for p in list(seg.parameters()) + list(ms.unet.parameters()):
        p.requires_grad_(False)
    return InferenceModel(encoder=seg.encoder, decoder=seg.decoder, unet=ms.unet)


@dataclass
class ArraySplit:
    """One (domain, split) loaded into memory as stacked tensors."""

    images: Tensor
    labels: Tensor | None
    names: list[str]

    def __len__(self) -> int:
        return self.images.shape[0]


def load_split_tensors(root: str | Path, domain: str, split: str, num_classes: int) -> ArraySplit:
    items = load_dataset(root, split, domain, num_classes)
    if not items:
        raise StateError(f"dataset split {domain}/{split} under {root} is empty")
    images = torch.stack([it.image for it in items])
    labels = None
    if items[0].label is not None:
        labels = torch.stack([it.label for it in items])
    return ArraySplit(images=images, labels=labels, names=[it.name for it in items])


def epoch_order(n: int, seed: int) -> Tensor:
    return torch.randperm(n, generator=torch.Generator().manual_seed(seed))


def lr_at(
    cfg: RunConfig, epoch: int, step_in_stage: int, total_steps: int, base_lr: float | None = None
) -> float:
    """Base lr with the stepped epoch decay and per-step polynomial decay."""
    lr = (cfg.lr if base_lr is None else base_lr)
    lr *= cfg.lr_epoch_decay ** (epoch // cfg.lr_epoch_decay_every)
    return lr * max(0.0, 1.0 - step_in_stage / max(total_steps, 1)) ** cfg.lr_poly_power


def _set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


class LossLog:
    """Append-only (step, component, value) CSV."""

    def __init__(self, path: Path):
        self.path = path
        new = not path.exists()
        self._fh = open(path, "a", newline="")
        self._writer = csv.writer(self._fh)
        if new:
            self._writer.writerow(["step", "component", "value"])

    def record(self, step: int, record: dict[str, float]) -> None:
        for component, value in record.items():
            self._writer.writerow([step, component, repr(float(value))])

    def close(self) -> None:
        self._fh.flush()
        self._fh.close()


def _latest_epoch_checkpoint(run_dir: Path) -> Path | None:
    ckpts = sorted((run_dir / "checkpoints").glob("epoch_*"))
    return ckpts[-1] if ckpts else None


def final_checkpoint(run_dir: Path) -> Path:
    path = _latest_epoch_checkpoint(run_dir)
    if path is None:
        raise StateError(f"no checkpoint found under {run_dir}")
    return path


def train_stage1(cfg: RunConfig, run_dir: str | Path, resume: bool = False) -> Path:
    """Source-supervised warmup then mixed self-training on the seg pair.

    Returns the final epoch's checkpoint directory.
    """
    cfg.validate()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / "config.json")
    source = load_split_tensors(cfg.dataset, "source", "train", cfg.num_classes)
    target = load_split_tensors(cfg.dataset, "target", "train", cfg.num_classes)

    bundle = new_bundle(cfg)
    opt = torch.optim.Adam(bundle.seg_pair.online.parameters(), lr=cfg.lr)
    start_epoch, step = 0, 0
    if resume:
        latest = _latest_epoch_checkpoint(run_dir)
        if latest is not None:
            bundle, arrays, meta = load_bundle(latest, cfg)
            opt = torch.optim.Adam(bundle.seg_pair.online.parameters(), lr=cfg.lr)
            ckpt.load_optimizer_arrays(
                opt, bundle.seg_pair.online, "opt/seg", arrays, meta["opt_steps"]
            )
            start_epoch = meta["epoch"] + 1
            step = meta["step"]

    steps_per_epoch = min(len(source), len(target)) // cfg.batch_size
    total_steps = cfg.stage1_epochs * steps_per_epoch
    log = LossLog(run_dir / "loss.csv")
    try:
        for epoch in range(start_epoch, cfg.stage1_epochs):
            use_mix = epoch >= cfg.stage1_warmup_epochs
            s_order = epoch_order(len(source), derive_seed(cfg.seed, "s1-src", epoch))
            t_order = epoch_order(len(target), derive_seed(cfg.seed, "s1-tgt", epoch))
            for b in range(steps_per_epoch):
                si = s_order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                ti = t_order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                _set_lr(opt, lr_at(cfg, epoch, step, total_steps))
                record = stage1_step(
                    bundle.seg_pair,
                    source.images[si],
                    source.labels[si],
                    target.images[ti],
                    opt,
                    rng_seed=derive_seed(cfg.seed, "s1-mix", epoch, b),
                    use_mix=use_mix,
                    noise_sigma=cfg.mix_noise_sigma,
                    pyramid_dropout=cfg.pyramid_dropout if cfg.use_intercoder else 0.0,
                )
                step += 1
                log.record(step, record)
            save_bundle(
                run_dir / "checkpoints" / f"epoch_{epoch:03d}",
                bundle, cfg, "stage1", epoch, step,
                optimizers={"seg": (opt, bundle.seg_pair.online)},
            )
    finally:
        log.close()
    return final_checkpoint(run_dir)


def train_stage2(
    cfg: RunConfig, run_dir: str | Path, stage1_ckpt: str | Path, resume: bool = False
) -> Path:
    """Diffusion training with adversarial latent alignment on the UNet pair.

    The encoder and decoder come frozen from the stage-1 checkpoint; the EMA
    copies (which serve inference) provide latents and pseudo labels.
    """
    cfg.validate()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / "config.json")
    stage1_ckpt = Path(stage1_ckpt)
    if not (stage1_ckpt / "manifest.json").is_file():
        raise StateError(f"stage-1 checkpoint not found at {stage1_ckpt}")
    source = load_split_tensors(cfg.dataset, "source", "train", cfg.num_classes)
    target = load_split_tensors(cfg.dataset, "target", "train", cfg.num_classes)

    bundle, arrays, meta = load_bundle(stage1_ckpt, cfg)
    for p in bundle.seg_pair.online.parameters():
        p.requires_grad_(False)
    frozen_encoder = bundle.seg_pair.ema.encoder
    frozen_seg = bundle.seg_pair.ema
    sched = build_linear_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)

    opt_unet = torch.optim.Adam(bundle.unet_pair.online.parameters(), lr=cfg.stage2_lr)
    opt_disc = torch.optim.Adam(bundle.disc.parameters(), lr=cfg.disc_lr)
    start_epoch, step = 0, 0
    if resume:
        latest = _latest_epoch_checkpoint(run_dir)
        if latest is not None:
            bundle, arrays, meta = load_bundle(latest, cfg)
            for p in bundle.seg_pair.online.parameters():
                p.requires_grad_(False)
            frozen_encoder = bundle.seg_pair.ema.encoder
            frozen_seg = bundle.seg_pair.ema
            opt_unet = torch.optim.Adam(bundle.unet_pair.online.parameters(), lr=cfg.stage2_lr)
            opt_disc = torch.optim.Adam(bundle.disc.parameters(), lr=cfg.disc_lr)
            ckpt.load_optimizer_arrays(
                opt_unet, bundle.unet_pair.online, "opt/unet", arrays, meta["opt_steps"]
            )
            ckpt.load_optimizer_arrays(
                opt_disc, bundle.disc, "opt/disc", arrays, meta["opt_steps"]
            )
            start_epoch = meta["epoch"] + 1
            step = meta["step"]

    steps_per_epoch = min(len(source), len(target)) // cfg.batch_size
    total_steps = cfg.stage2_epochs * steps_per_epoch
    log = LossLog(run_dir / "loss.csv")
    try:
        for epoch in range(start_epoch, cfg.stage2_epochs):
            s_order = epoch_order(len(source), derive_seed(cfg.seed, "s2-src", epoch))
            t_order = epoch_order(len(target), derive_seed(cfg.seed, "s2-tgt", epoch))
            for b in range(steps_per_epoch):
                si = s_order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                ti = t_order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                x_s = source.images[si]
                y_s = source.labels[si]
                x_t = target.images[ti]
                x_m = build_mixed_images(
                    frozen_seg, x_s, y_s, x_t,
                    rng_seed=derive_seed(cfg.seed, "s2-mix", epoch, b),
                    noise_sigma=cfg.mix_noise_sigma,
                )
                _set_lr(opt_unet, lr_at(cfg, epoch, step, total_steps, cfg.stage2_lr))
                _set_lr(opt_disc, lr_at(cfg, epoch, step, total_steps, cfg.disc_lr))
                record = stage2_step(
                    bundle.unet_pair,
                    bundle.disc,
                    frozen_encoder,
                    (x_s, x_m, x_t),
                    sched,
                    opt_unet,
                    opt_disc,
                    rng_seed=derive_seed(cfg.seed, "s2-diff", epoch, b),
                    lambda_adv=cfg.lambda_adv,
                )
                step += 1
                log.record(step, record)
            save_bundle(
                run_dir / "checkpoints" / f"epoch_{epoch:03d}",
                bundle, cfg, "stage2", epoch, step,
                optimizers={
                    "unet": (opt_unet, bundle.unet_pair.online),
                    "disc": (opt_disc, bundle.disc),
                },
            )
    finally:
        log.close()
    return final_checkpoint(run_dir)
