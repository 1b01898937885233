"""The four networks: a strided-conv pyramid encoder, a segmentation decoder
with optional long skip connections from the encoder, a conditioned denoising
UNet, and a 3-way domain discriminator built from the UNet's downsampling half.

All modules accept either a single sample (rank 3) or a batch (rank 4) and
return the matching rank. Group normalization plus SiLU keeps forward passes
stable at tiny batch sizes; there are no running statistics anywhere, so
train/eval mode is irrelevant and forward passes are pure in the parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class ArchConfig:
    """Layer sizes for all four networks.

    ``enc_channels`` has one entry per encoder stage (each stage halves the
    spatial size); ``unet_channels`` has one entry per UNet resolution level
    (len-1 downsamplings below the latent resolution).
    """

    in_channels: int = 3
    image_size: int = 64
    num_classes: int = 5
    enc_channels: tuple[int, ...] = (32, 64, 128)
    latent_channels: int = 128
    unet_channels: tuple[int, ...] = (64, 96, 128)
    time_dim: int = 128
    use_intercoder: bool = True

    @property
    def downscale(self) -> int:
        return 2 ** len(self.enc_channels)

    @property
    def latent_size(self) -> int:
        return self.image_size // self.downscale

    def validate(self) -> None:
        if self.image_size % self.downscale != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by {self.downscale}"
            )
        if self.latent_size < 2 ** (len(self.unet_channels) - 1):
            raise ConfigError(
                f"latent size {self.latent_size} too small for "
                f"{len(self.unet_channels) - 1} UNet downsamplings"
            )


class EncoderOutput(NamedTuple):
    latent: Tensor
    pyramid: list[Tensor]


def _gn(channels: int) -> nn.GroupNorm:
    for groups in (8, 4, 2, 1):
        if channels % groups == 0:
            return nn.GroupNorm(groups, channels)
    raise AssertionError("unreachable")


def _with_batch(x: Tensor):
    """Add a batch axis to a rank-3 tensor; report whether it was added."""
    if x.ndim == 3:
        return x.unsqueeze(0), True
    return x, False


class ConvBlock(nn.Module):
    """conv3x3 -> GN -> SiLU, twice."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.norm1 = _gn(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = _gn(out_ch)

    def forward(self, x: Tensor) -> Tensor:
        h = F.silu(self.norm1(self.conv1(x)))
        return F.silu(self.norm2(self.conv2(h)))


class Encoder(nn.Module):
    """Strided conv pyramid; returns the bottleneck latent plus the per-scale
    feature maps that feed the decoder's long skip connections."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        stages = []
        prev = cfg.in_channels
        for ch in cfg.enc_channels:
            stages.append(ConvBlock(prev, ch, stride=2))
            prev = ch
        self.stages = nn.ModuleList(stages)
        # normalized latent head: diffusion assumes roughly unit-scale data,
        # so the bottleneck is normalized like every other block output
        self.to_latent = nn.Conv2d(prev, cfg.latent_channels, 3, padding=1)
        self.latent_norm = _gn(cfg.latent_channels)

    def forward(self, x: Tensor) -> EncoderOutput:
        x, squeeze = _with_batch(x)
        if x.shape[1] != self.cfg.in_channels:
            raise ContractError(
                f"expected {self.cfg.in_channels} input channels, got {x.shape[1]}"
            )
        if x.shape[-1] % self.cfg.downscale or x.shape[-2] % self.cfg.downscale:
            raise ConfigError(
                f"spatial size {tuple(x.shape[-2:])} not divisible by {self.cfg.downscale}"
            )
        pyramid = []
        h = x
        for stage in self.stages:
            h = stage(h)
            pyramid.append(h)
        latent = self.latent_norm(self.to_latent(h))
        if squeeze:
            latent = latent.squeeze(0)
            pyramid = [p.squeeze(0) for p in pyramid]
        return EncoderOutput(latent=latent, pyramid=pyramid)


class Decoder(nn.Module):
    """Upsampling segmentation head: latent (plus optional encoder pyramid)
    to per-class logits at input resolution.

    The block at the latent scale consumes the latent alone; with the long
    skips enabled, each upsampling block concatenates its upsampled features
    with the same-scale pyramid entry (the skips carry fine spatial detail,
    the latent carries the coarse semantics). Without them the pyramid is
    ignored entirely and the blocks run at reduced input widths.
    """

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        widths = list(reversed(cfg.enc_channels))      # deepest scale first
        self.latent_norm = _gn(cfg.latent_channels)    # guards against off-scale latents
        blocks = []
        prev = cfg.latent_channels
        for i, out_ch in enumerate(widths):
            # skip channels exist only for the upsampling blocks (i >= 1),
            # whose scales match pyramid entries below the deepest one
            skip_ch = widths[i] if cfg.use_intercoder and i >= 1 else 0
            blocks.append(ConvBlock(prev + skip_ch, out_ch))
            prev = out_ch
        self.blocks = nn.ModuleList(blocks)
        # full-resolution refinement: without it, boundary precision is
        # capped at the 2x2 blocks of the final nearest upsample
        self.refine = ConvBlock(prev, prev)
        self.head = nn.Conv2d(prev, cfg.num_classes, 1)

    def forward(self, latent: Tensor, pyramid: list[Tensor] | None = None) -> Tensor:
        latent, squeeze = _with_batch(latent)
        use_pyr = self.cfg.use_intercoder
        if use_pyr:
            if pyramid is None or len(pyramid) != len(self.blocks):
                raise ContractError(
                    f"expected {len(self.blocks)} pyramid levels, got "
                    f"{0 if pyramid is None else len(pyramid)}"
                )
            pyramid = [_with_batch(p)[0] for p in reversed(pyramid)]
        h = self.latent_norm(latent)
        for i, block in enumerate(self.blocks):
            if i > 0:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                if use_pyr:
                    skip = pyramid[i]
                    if skip.shape[-2:] != h.shape[-2:]:
                        raise ContractError(
                            f"pyramid level {i} size {tuple(skip.shape[-2:])} does "
                            f"not match decoder features {tuple(h.shape[-2:])}"
                        )
                    h = torch.cat([h, skip], dim=1)
            h = block(h)
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        logits = self.head(self.refine(h))
        return logits.squeeze(0) if squeeze else logits


def timestep_embedding(t: Tensor, dim: int) -> Tensor:
    """Sinusoidal embedding of integer timesteps, shape (len(t), dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1)
    )
    args = t.double().reshape(-1, 1) * freqs.reshape(1, -1)
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ResBlock(nn.Module):
    """Pre-norm residual block; the time embedding enters as a per-channel
    scale-and-shift after the second normalization. ``time_dim=0`` disables
    time conditioning (used by the discriminator)."""

    def __init__(self, in_ch: int, out_ch: int, time_dim: int = 0):
        super().__init__()
        self.norm1 = _gn(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = _gn(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.emb = nn.Linear(time_dim, 2 * out_ch) if time_dim else None
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: Tensor, temb: Tensor | None = None) -> Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.norm2(h)
        if self.emb is not None:
            scale, shift = self.emb(F.silu(temb)).chunk(2, dim=-1)
            h = h * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]
        h = self.conv2(F.silu(h))
        return h + self.skip(x)


class DenoiseUNet(nn.Module):
    """Noise predictor over latents, conditioned by channel-concatenating the
    clean latent onto the noised one at the input."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        chs = cfg.unet_channels
        td = cfg.time_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td)
        )
        self.stem = nn.Conv2d(2 * cfg.latent_channels, chs[0], 3, padding=1)
        self.down_res = nn.ModuleList(
            [ResBlock(chs[i], chs[i], td) for i in range(len(chs) - 1)]
        )
        self.downs = nn.ModuleList(
            [nn.Conv2d(chs[i], chs[i + 1], 3, stride=2, padding=1) for i in range(len(chs) - 1)]
        )
        self.mid = ResBlock(chs[-1], chs[-1], td)
        self.up_convs = nn.ModuleList(
            [nn.Conv2d(chs[i + 1], chs[i], 3, padding=1) for i in reversed(range(len(chs) - 1))]
        )
        self.up_res = nn.ModuleList(
            [ResBlock(2 * chs[i], chs[i], td) for i in reversed(range(len(chs) - 1))]
        )
        self.out_norm = _gn(chs[0])
        self.out_conv = nn.Conv2d(chs[0], cfg.latent_channels, 3, padding=1)
        # time-conditioned linear path from the noised input straight to the
        # prediction; the per-timestep gain lives here, which the conv trunk
        # alone is slow to discover. The conditioning latent gets no such
        # shortcut: an untrained gain on it would leak the condition into
        # the reverse process before any training happened.
        self.skip_gain = nn.Linear(td, cfg.latent_channels)

    def forward(self, x_t: Tensor, t: int | Tensor, cond: Tensor) -> Tensor:
        x_t, squeeze = _with_batch(x_t)
        cond, _ = _with_batch(cond)
        if x_t.shape != cond.shape:
            raise ContractError(
                f"x_t shape {tuple(x_t.shape)} != cond shape {tuple(cond.shape)}"
            )
        if not isinstance(t, Tensor):
            t = torch.full((x_t.shape[0],), int(t))
        temb = self.time_mlp(
            timestep_embedding(t, self.cfg.time_dim).to(x_t.dtype)
        )
        h = self.stem(torch.cat([x_t, cond], dim=1))
        skips = []
        for res, down in zip(self.down_res, self.downs):
            h = res(h, temb)
            skips.append(h)
            h = down(h)
        h = self.mid(h, temb)
        for conv, res in zip(self.up_convs, self.up_res):
            h = conv(F.interpolate(h, scale_factor=2, mode="nearest"))
            h = res(torch.cat([h, skips.pop()], dim=1), temb)
        out = self.out_conv(F.silu(self.out_norm(h)))
        gain_x = self.skip_gain(F.silu(temb))
        out = out + gain_x[:, :, None, None] * x_t
        return out.squeeze(0) if squeeze else out


class DomainDiscriminator(nn.Module):
    """The UNet's downsampling path over a predicted-noise map, followed by
    global average pooling and one affine map to 3 domain logits."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        chs = cfg.unet_channels
        self.stem = nn.Conv2d(cfg.latent_channels, chs[0], 3, padding=1)
        self.down_res = nn.ModuleList(
            [ResBlock(chs[i], chs[i]) for i in range(len(chs) - 1)]
        )
        self.downs = nn.ModuleList(
            [nn.Conv2d(chs[i], chs[i + 1], 3, stride=2, padding=1) for i in range(len(chs) - 1)]
        )
        self.mid = ResBlock(chs[-1], chs[-1])
        self.out_norm = _gn(chs[-1])
        self.head = nn.Linear(chs[-1], 3)

    def forward(self, eps_pred: Tensor) -> Tensor:
        eps_pred, squeeze = _with_batch(eps_pred)
        if eps_pred.shape[1] != self.cfg.latent_channels:
            raise ContractError(
                f"expected {self.cfg.latent_channels} channels, got {eps_pred.shape[1]}"
            )
        h = self.stem(eps_pred)
        for res, down in zip(self.down_res, self.downs):
            h = down(res(h))
        h = F.silu(self.out_norm(self.mid(h)))
        logits = self.head(h.mean(dim=(2, 3)))
        return logits.squeeze(0) if squeeze else logits

    def probs(self, eps_pred: Tensor) -> Tensor:
        """Softmax domain probabilities over (source, mixed, target)."""
        return torch.softmax(self.forward(eps_pred), dim=-1)


@dataclass
class ModelSet:
    """The four freshly initialized networks for one architecture config."""

    encoder: Encoder
    decoder: Decoder
    unet: DenoiseUNet
    disc: DomainDiscriminator


def init_module(module: nn.Module, gen: torch.Generator) -> None:
    """Fan-in-scaled uniform weights, zero biases, unit norm gains.

    Parameters are visited in registration order, so the result is a pure
    function of the generator state.
    """
    for name, p in module.named_parameters():
        with torch.no_grad():
            if p.ndim >= 2:
                fan_in = p.shape[1] * (p[0][0].numel() if p.ndim > 2 else 1)
                bound = 1.0 / math.sqrt(fan_in)
                p.uniform_(-bound, bound, generator=gen)
            elif name.endswith("weight"):
                p.fill_(1.0)
            else:
                p.fill_(0.0)


def build_models(cfg: ArchConfig, seed: int) -> ModelSet:
    """Construct and deterministically initialize all four networks."""
    gen = torch.Generator().manual_seed(seed)
    ms = ModelSet(
        encoder=Encoder(cfg),
        decoder=Decoder(cfg),
        unet=DenoiseUNet(cfg),
        disc=DomainDiscriminator(cfg),
    )
    for m in (ms.encoder, ms.decoder, ms.unet, ms.disc):
        init_module(m, gen)
    return ms


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
