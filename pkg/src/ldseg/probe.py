"""Domain-discriminator probes.

A probe is a fresh discriminator fitted against a frozen UNet's noise
predictions; its held-out accuracy measures how much domain identity leaks
through the diffusion path. Comparing the probe accuracy against a
never-aligned UNet with the accuracy of the adversarially trained
discriminator after stage 2 quantifies the alignment effect.
"""

from __future__ import annotations

import torch
from torch import Tensor

from .diffusion import NoiseSchedule, forward_diffuse
from .models import ArchConfig, DenoiseUNet, DomainDiscriminator, Encoder, init_module
from .uda import MIXED, SOURCE, TARGET, SegModel, adv_losses, build_mixed_images, derive_seed


@torch.no_grad()
def _noise_predictions(
    encoder: Encoder,
    unet: DenoiseUNet,
    batch: tuple[Tensor, Tensor, Tensor],
    sched: NoiseSchedule,
    rng_seed: int,
) -> Tensor:
    """Stacked noise predictions for a (source, mixed, target) image triple,
    drawn with the same per-domain sampling scheme the stage-2 step uses."""
    gen = torch.Generator().manual_seed(rng_seed)
    zs, ts, epss = [], [], []
    for x in batch:
        z = encoder(x).latent
        ts.append(torch.randint(0, sched.T, (z.shape[0],), generator=gen))
        epss.append(torch.randn(z.shape, generator=gen))
        zs.append(z)
    z_all = torch.cat(zs)
    t_all = torch.cat(ts)
    eps_all = torch.cat(epss)
    return unet(forward_diffuse(z_all, t_all, eps_all, sched), t_all, z_all)


def _sample_batch(images: Tensor, batch_size: int, gen: torch.Generator) -> tuple[Tensor, Tensor]:
    idx = torch.randint(0, images.shape[0], (batch_size,), generator=gen)
    return images[idx], idx


def train_probe_discriminator(
    arch: ArchConfig,
    encoder: Encoder,
    unet: DenoiseUNet,
    seg_ema: SegModel,
    x_source: Tensor,
    y_source: Tensor,
    x_target: Tensor,
    sched: NoiseSchedule,
    steps: int = 200,
    batch_size: int = 8,
    lr: float = 1e-3,
    seed: int = 0,
    noise_sigma: float = 0.02,
) -> DomainDiscriminator:
    """Fit a fresh 3-way discriminator against frozen encoder/UNet predictions."""
    disc = DomainDiscriminator(arch)
    init_module(disc, torch.Generator().manual_seed(derive_seed(seed, "probe-init")))
    opt = torch.optim.Adam(disc.parameters(), lr=lr)
    for step in range(steps):
        gen = torch.Generator().manual_seed(derive_seed(seed, "probe-batch", step))
        x_s, si = _sample_batch(x_source, batch_size, gen)
        x_t, _ = _sample_batch(x_target, batch_size, gen)
        x_m = build_mixed_images(
            seg_ema, x_s, y_source[si], x_t,
            rng_seed=derive_seed(seed, "probe-mix", step), noise_sigma=noise_sigma,
        )
        eps_hat = _noise_predictions(
            encoder, unet, (x_s, x_m, x_t), sched, derive_seed(seed, "probe-noise", step)
        )
        per_domain = torch.chunk(eps_hat, 3)
        loss = torch.stack(
            [adv_losses(per_domain[d], d, disc)[0] for d in (SOURCE, MIXED, TARGET)]
        ).mean()
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    return disc


@torch.no_grad()
def discriminator_accuracy(
    disc: DomainDiscriminator,
    encoder: Encoder,
    unet: DenoiseUNet,
    seg_ema: SegModel,
    x_source: Tensor,
    y_source: Tensor,
    x_target: Tensor,
    sched: NoiseSchedule,
    seed: int = 0,
    batch_size: int = 8,
    noise_sigma: float = 0.02,
) -> float:
    """3-way domain classification accuracy over a held-out image set."""
    n = min(x_source.shape[0], x_target.shape[0])
    correct, total = 0, 0
    for lo in range(0, n, batch_size):
        x_s = x_source[lo : lo + batch_size]
        y_s = y_source[lo : lo + batch_size]
        x_t = x_target[lo : lo + batch_size]
        if x_s.shape[0] != x_t.shape[0]:
            break
        x_m = build_mixed_images(
            seg_ema, x_s, y_s, x_t,
            rng_seed=derive_seed(seed, "acc-mix", lo), noise_sigma=noise_sigma,
        )
        eps_hat = _noise_predictions(
            encoder, unet, (x_s, x_m, x_t), sched, derive_seed(seed, "acc-noise", lo)
        )
        pred = torch.argmax(disc(eps_hat), dim=-1)
        tags = torch.cat(
            [torch.full((x_s.shape[0],), d) for d in (SOURCE, MIXED, TARGET)]
        )
        correct += int((pred == tags).sum())
        total += int(tags.numel())
    return correct / total
