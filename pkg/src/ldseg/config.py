"""Run configuration: every tunable in one serializable dataclass.

Precedence when resolving: built-in defaults < JSON config file < command
line flags. The resolved config is written next to every run's outputs and
its hash is stamped into checkpoints.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .models import ArchConfig


@dataclass
class RunConfig:
    seed: int = 0
    # data
    image_size: int = 64
    num_classes: int = 5
    in_channels: int = 3
    dataset: str = ""
    out: str = ""
    # architecture
    enc_channels: tuple[int, ...] = (32, 64, 128)
    latent_channels: int = 128
    unet_channels: tuple[int, ...] = (64, 96, 128)
    time_dim: int = 128
    use_intercoder: bool = True
    # diffusion
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    ddim_steps: int = 50
    # optimization; `lr` drives stage 1, the stage-2 networks start from
    # scratch (no pretrained backbone) and need a faster rate to converge
    # within the short stage-2 budget
    lr: float = 6e-5
    stage2_lr: float = 1e-3
    disc_lr: float = 1e-3
    lr_epoch_decay: float = 0.99
    lr_epoch_decay_every: int = 5
    lr_poly_power: float = 0.9
    batch_size: int = 2
    stage1_epochs: int = 10
    stage1_warmup_epochs: int = 2
    stage2_epochs: int = 5
    ema_alpha: float = 0.999
    lambda_adv: float = 0.1
    mix_noise_sigma: float = 0.02
    # chance of zeroing the long skips per sample during stage-1 training,
    # keeping the decoder's dependence on the diffusion latent alive
    pyramid_dropout: float = 0.5

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ConfigError("ema_alpha must be in [0, 1]")
        if self.stage1_warmup_epochs > self.stage1_epochs:
            raise ConfigError("stage1_warmup_epochs cannot exceed stage1_epochs")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        self.arch().validate()

    def arch(self) -> ArchConfig:
        return ArchConfig(
            in_channels=self.in_channels,
            image_size=self.image_size,
            num_classes=self.num_classes,
            enc_channels=tuple(self.enc_channels),
            latent_channels=self.latent_channels,
            unet_channels=tuple(self.unet_channels),
            time_dim=self.time_dim,
            use_intercoder=self.use_intercoder,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["enc_channels"] = list(self.enc_channels)
        d["unet_channels"] = list(self.unet_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("enc_channels", "unet_channels"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            with open(path) as f:
                return cls.from_dict(json.load(f))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e


def resolve_config(config_file: str | None, overrides: dict) -> RunConfig:
    """defaults < JSON file < explicit flags (``overrides`` holds only flags
    the user actually passed)."""
    cfg = RunConfig.load(config_file) if config_file else RunConfig()
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown config field {key}")
        if key in ("enc_channels", "unet_channels"):
            value = tuple(value)
        setattr(cfg, key, value)
    cfg.validate()
    return cfg
