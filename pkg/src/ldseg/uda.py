"""Two-stage adaptation machinery.

Stage 1 adapts the encoder/decoder pair with self-training: pseudo labels on
target images come from the EMA copy, class-mixed images combine source and
target pixels, and both the source and mixed batches feed a cross-entropy
loss. Stage 2 trains the denoising UNet on encoder latents with the noise
prediction loss plus an adversarial term that pushes a 3-way domain
discriminator toward uniform output. Inference draws a Gaussian latent,
denoises it deterministically under conditioning by the image's own latent,
and decodes.

Naming note: the gradient-trained networks are held as ``online`` and the
averaged copies as ``ema``; the EMA copy is what produces pseudo labels and
serves inference.
"""

from __future__ import annotations

import copy
import math
import warnings
from dataclasses import dataclass

import torch
import torch.nn as nn
from torch import Tensor

from .diffusion import NoiseSchedule, forward_diffuse, ldm_loss, make_ddim_timesteps, ddim_step
from .errors import ContractError, DegenerateBatchWarning, InputError, NumericError
from .models import Decoder, DenoiseUNet, DomainDiscriminator, Encoder

IGNORE_ID = 255

# domain indices for tags and discriminator outputs
SOURCE, MIXED, TARGET = 0, 1, 2
_EYE3 = torch.eye(3)


def domain_onehot(tag: int) -> Tensor:
    """Pseudo-one-hot domain vector: source [1,0,0], mixed [0,1,0], target [0,0,1]."""
    if tag not in (SOURCE, MIXED, TARGET):
        raise ContractError(f"unknown domain tag {tag}")
    return _EYE3[tag]


def derive_seed(*parts) -> int:
    """Deterministic 31-bit seed from a tuple of ints/strings (FNV-1a)."""
    h = 2166136261
    for part in parts:
        data = part.encode() if isinstance(part, str) else int(part).to_bytes(8, "little", signed=True)
        for b in data:
            h = ((h ^ b) * 16777619) & 0xFFFFFFFF
    return h & 0x7FFFFFFF


class SegModel(nn.Module):
    """Encoder plus decoder, composed into one segmentation network.

    ``pyramid_scale`` multiplies every pyramid entry per sample (0 disables
    the long skips for that sample); training uses it as modality dropout so
    the decoder keeps a live dependence on the latent path.
    """

    def __init__(self, encoder: Encoder, decoder: Decoder):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder

    def forward(self, x: Tensor, pyramid_scale: Tensor | None = None) -> Tensor:
        out = self.encoder(x)
        pyramid = out.pyramid
        if pyramid_scale is not None:
            shape = (-1,) + (1,) * (pyramid[0].ndim - 1)
            pyramid = [p * pyramid_scale.reshape(shape).to(p.dtype) for p in pyramid]
        return self.decoder(out.latent, pyramid)


class ModelPair:
    """A gradient-trained network and its exponential-moving-average copy.

    Only ``online`` ever receives gradients; ``update`` folds it into ``ema``
    with weight ``1 - ema_alpha`` per call.
    """

    def __init__(self, online: nn.Module, ema_alpha: float = 0.999):
        if not 0.0 <= ema_alpha <= 1.0:
            raise ContractError(f"ema_alpha must be in [0,1], got {ema_alpha}")
        self.online = online
        self.ema = copy.deepcopy(online)
        for p in self.ema.parameters():
            p.requires_grad_(False)
        self.ema_alpha = ema_alpha

    @torch.no_grad()
    def update(self) -> "ModelPair":
        for po, pe in zip(self.online.parameters(), self.ema.parameters()):
            if po.shape != pe.shape:
                raise ContractError("online/ema parameter shapes diverged")
            pe.mul_(self.ema_alpha).add_(po, alpha=1.0 - self.ema_alpha)
        return self


def ema_update(pair: ModelPair) -> ModelPair:
    return pair.update()


def pseudo_label(logits: Tensor) -> Tensor:
    """Per-pixel argmax over the class dimension; ties go to the smaller index."""
    dim = 0 if logits.ndim == 3 else 1
    return torch.argmax(logits, dim=dim)


def seg_loss(logits: Tensor, y: Tensor, ignore_id: int = IGNORE_ID) -> Tensor:
    """Mean cross-entropy over non-ignored pixels, probabilities clamped at 1e-12."""
    squeeze = logits.ndim == 3
    if squeeze:
        logits = logits.unsqueeze(0)
        y = y.unsqueeze(0)
    if logits.shape[-2:] != y.shape[-2:] or logits.shape[0] != y.shape[0]:
        raise ContractError(
            f"logits shape {tuple(logits.shape)} incompatible with labels {tuple(y.shape)}"
        )
    num_classes = logits.shape[1]
    valid = y != ignore_id
    if ((y < 0) | ((y >= num_classes) & valid)).any():
        raise ContractError(f"label values outside [0, {num_classes}) and not ignore")
    if not valid.any():
        warnings.warn("all pixels ignored; segmentation loss is 0", DegenerateBatchWarning)
        return logits.sum() * 0.0
    probs = torch.softmax(logits, dim=1).clamp_min(1e-12)
    y_safe = torch.where(valid, y, torch.zeros_like(y))
    p_true = probs.gather(1, y_safe.unsqueeze(1)).squeeze(1)
    return -(torch.log(p_true)[valid]).mean()


@dataclass
class MixedBatch:
    """A class-mixed image/label pair plus the paste mask that built it."""

    x_mixed: Tensor
    y_mixed: Tensor
    mix_mask: Tensor


def classmix(
    x_s: Tensor,
    y_s: Tensor,
    x_t: Tensor,
    y_pseudo: Tensor,
    rng_seed: int,
    n_select: int | None = None,
    augment: bool = True,
    noise_sigma: float = 0.02,
) -> MixedBatch:
    """Paste the pixels of half the source classes onto the target image.

    Selects ceil(n/2) of the distinct non-ignore classes in ``y_s`` uniformly
    without replacement (``n_select`` overrides the count, mainly for tests),
    composes image and label accordingly, then jitters brightness/contrast and
    adds light Gaussian noise to the mixed image only.
    """
    if x_s.shape != x_t.shape or y_s.shape != y_pseudo.shape or x_s.shape[-2:] != y_s.shape[-2:]:
        raise ContractError("classmix inputs must share spatial sizes")
    classes = torch.unique(y_s)
    classes = classes[classes != IGNORE_ID]
    if classes.numel() == 0:
        raise InputError("source label map contains no non-ignore classes")
    n = classes.numel()
    k = math.ceil(n / 2) if n_select is None else n_select
    if not 0 <= k <= n:
        raise ContractError(f"n_select {k} outside [0, {n}]")
    gen = torch.Generator().manual_seed(rng_seed)
    selected = classes[torch.randperm(n, generator=gen)[:k]]
    mix_mask = torch.isin(y_s, selected)
    x_mixed = torch.where(mix_mask.unsqueeze(0) if x_s.ndim == 3 else mix_mask, x_s, x_t)
    y_mixed = torch.where(mix_mask, y_s, y_pseudo)
    if augment:
        contrast = 0.9 + 0.2 * torch.rand((), generator=gen)
        brightness = -0.05 + 0.1 * torch.rand((), generator=gen)
        sigma = noise_sigma * torch.rand((), generator=gen)
        noise = torch.randn(x_mixed.shape, generator=gen) * sigma
        x_mixed = (contrast * x_mixed + brightness + noise).clamp(0.0, 1.0)
    return MixedBatch(x_mixed=x_mixed, y_mixed=y_mixed, mix_mask=mix_mask)


def build_mixed_images(
    seg_ema: "SegModel",
    x_s: Tensor,
    y_s: Tensor,
    x_t: Tensor,
    rng_seed: int,
    noise_sigma: float = 0.02,
) -> Tensor:
    """Class-mixed batch for training: target pseudo labels come from the EMA
    segmentation model, composition follows ``classmix`` per sample."""
    with torch.no_grad():
        y_pseudo = pseudo_label(seg_ema(x_t))
    return torch.stack(
        [
            classmix(
                x_s[i], y_s[i], x_t[i], y_pseudo[i],
                rng_seed=derive_seed(rng_seed, i),
                noise_sigma=noise_sigma,
            ).x_mixed
            for i in range(x_s.shape[0])
        ]
    )


def adv_losses(
    eps_pred: Tensor, tag: int, disc: DomainDiscriminator
) -> tuple[Tensor, Tensor]:
    """Discriminator cross-entropy and generator KL-to-uniform for one domain.

    The discriminator loss is the standard CE of its softmax output against
    the domain tag; the generator loss is KL(p || uniform(1/3)), zero exactly
    when the discriminator is maximally confused.
    """
    p = disc.probs(eps_pred).clamp_min(1e-12)
    if p.ndim == 1:
        p = p.unsqueeze(0)
    onehot = domain_onehot(tag).to(p.dtype)
    disc_loss = -(onehot * torch.log(p)).sum(dim=-1).mean()
    gen_loss = (p * torch.log(3.0 * p)).sum(dim=-1).mean()
    return disc_loss, gen_loss


def stage1_losses(
    seg: SegModel,
    x_s: Tensor,
    y_s: Tensor,
    x_m: Tensor,
    y_m: Tensor,
    pyramid_scale: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Source and mixed segmentation losses through one (online) model."""
    return (
        seg_loss(seg(x_s, pyramid_scale), y_s),
        seg_loss(seg(x_m, pyramid_scale), y_m),
    )


def _check_finite(value: Tensor, what: str) -> None:
    if not torch.isfinite(value).all():
        raise NumericError(f"{what} became non-finite")


def stage1_step(
    pair: ModelPair,
    x_s: Tensor,
    y_s: Tensor,
    x_t: Tensor,
    optimizer: torch.optim.Optimizer,
    rng_seed: int,
    use_mix: bool = True,
    augment: bool = True,
    noise_sigma: float = 0.02,
    pyramid_dropout: float = 0.0,
) -> dict[str, float]:
    """One adaptation step on the encoder/decoder pair.

    Pseudo-labels the target batch with the EMA model, builds class-mixed
    samples, takes a gradient step on the summed source+mixed cross-entropy,
    then folds the online weights into the EMA copy. With ``use_mix`` off it
    degenerates to plain supervised training on the source batch (the
    source-only pretraining phase runs exactly this). ``pyramid_dropout``
    zeroes the long skips for a random subset of samples per step.
    """
    seg: SegModel = pair.online  # type: ignore[assignment]
    record: dict[str, float] = {}
    pyramid_scale = None
    if pyramid_dropout > 0.0:
        gen = torch.Generator().manual_seed(derive_seed(rng_seed, "pyr-drop"))
        pyramid_scale = (
            torch.rand(x_s.shape[0], generator=gen) >= pyramid_dropout
        ).float()
    if use_mix:
        with torch.no_grad():
            y_pseudo = pseudo_label(pair.ema(x_t))
        mixed_x, mixed_y = [], []
        for b in range(x_s.shape[0]):
            mb = classmix(
                x_s[b], y_s[b], x_t[b], y_pseudo[b],
                rng_seed=derive_seed(rng_seed, b),
                augment=augment, noise_sigma=noise_sigma,
            )
            mixed_x.append(mb.x_mixed)
            mixed_y.append(mb.y_mixed)
        x_m = torch.stack(mixed_x)
        y_m = torch.stack(mixed_y)
        loss_src, loss_mix = stage1_losses(seg, x_s, y_s, x_m, y_m, pyramid_scale)
        loss = loss_src + loss_mix
        record["seg_mixed"] = float(loss_mix.detach())
    else:
        loss_src = seg_loss(seg(x_s, pyramid_scale), y_s)
        loss = loss_src
    record["seg_source"] = float(loss_src.detach())
    record["total"] = float(loss.detach())
    _check_finite(loss, "stage-1 loss")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    pair.update()
    return record


def stage2_step(
    unet_pair: ModelPair,
    disc: DomainDiscriminator,
    frozen_encoder: Encoder,
    batch: tuple[Tensor, Tensor, Tensor],
    sched: NoiseSchedule,
    opt_unet: torch.optim.Optimizer,
    opt_disc: torch.optim.Optimizer,
    rng_seed: int,
    lambda_adv: float = 0.1,
) -> dict[str, float]:
    """One diffusion-training step over the (source, mixed, target) triple.

    Phase A updates the discriminator on detached noise predictions; phase B
    updates the online UNet on the noise-prediction loss plus the weighted
    KL-to-uniform confusion term, then the EMA copy absorbs the update.
    """
    unet: DenoiseUNet = unet_pair.online  # type: ignore[assignment]
    if not (batch[0].shape == batch[1].shape == batch[2].shape):
        raise ContractError("stage-2 batch triple must share one shape")
    gen = torch.Generator().manual_seed(rng_seed)
    zs, ts, epss = [], [], []
    with torch.no_grad():
        for x in batch:
            z = frozen_encoder(x).latent
            t = torch.randint(0, sched.T, (z.shape[0],), generator=gen)
            eps = torch.randn(z.shape, generator=gen)
            zs.append(z)
            ts.append(t)
            epss.append(eps)
    z_all = torch.cat(zs)
    t_all = torch.cat(ts)
    eps_all = torch.cat(epss)
    x_noised = forward_diffuse(z_all, t_all, eps_all, sched)
    eps_hat = unet(x_noised, t_all, z_all)

    per_domain = torch.chunk(eps_hat, 3)
    # phase A: discriminator on detached predictions
    disc_losses = [
        adv_losses(per_domain[d].detach(), d, disc)[0] for d in (SOURCE, MIXED, TARGET)
    ]
    disc_loss = torch.stack(disc_losses).mean()
    _check_finite(disc_loss, "stage-2 discriminator loss")
    opt_disc.zero_grad(set_to_none=True)
    disc_loss.backward()
    opt_disc.step()

    # phase B: UNet against the (now frozen) discriminator
    for p in disc.parameters():
        p.requires_grad_(False)
    try:
        ldm_losses = [ldm_loss(e, p) for e, p in zip(torch.chunk(eps_all, 3), per_domain)]
        gen_losses = [adv_losses(per_domain[d], d, disc)[1] for d in (SOURCE, MIXED, TARGET)]
        ldm_total = torch.stack(ldm_losses).mean()
        gen_total = torch.stack(gen_losses).mean()
        loss = ldm_total + lambda_adv * gen_total
        _check_finite(loss, "stage-2 UNet loss")
        opt_unet.zero_grad(set_to_none=True)
        loss.backward()
        opt_unet.step()
    finally:
        for p in disc.parameters():
            p.requires_grad_(True)
    unet_pair.update()
    return {
        "ldm": float(ldm_total.detach()),
        "disc": float(disc_loss.detach()),
        "gen": float(gen_total.detach()),
        "total": float(loss.detach()),
    }


@dataclass
class InferenceModel:
    """The EMA networks that serve prediction."""

    encoder: Encoder
    decoder: Decoder
    unet: DenoiseUNet


@torch.no_grad()
def infer(
    x: Tensor,
    model: InferenceModel,
    sched: NoiseSchedule,
    n_ddim: int = 50,
    rng_seed: int = 0,
    noise: Tensor | None = None,
) -> Tensor:
    """Full prediction path: encode, denoise a Gaussian latent under
    conditioning by the image's own latent, decode, argmax.

    ``noise`` overrides the seeded Gaussian draw (used to batch images whose
    noise must not depend on how they were batched).
    """
    out = model.encoder(x)
    z0 = out.latent
    if noise is None:
        gen = torch.Generator().manual_seed(rng_seed)
        noise = torch.randn(z0.shape, generator=gen, dtype=z0.dtype)
    if noise.shape != z0.shape:
        raise ContractError(
            f"noise shape {tuple(noise.shape)} != latent shape {tuple(z0.shape)}"
        )
    z = noise
    steps = make_ddim_timesteps(sched.T, n_ddim)
    for i, t in enumerate(steps):
        t_prev = steps[i + 1] if i + 1 < len(steps) else -1
        eps_hat = model.unet(z, t, z0)
        z = ddim_step(z, eps_hat, t, t_prev, sched)
    logits = model.decoder(z, out.pyramid)
    return pseudo_label(logits)
