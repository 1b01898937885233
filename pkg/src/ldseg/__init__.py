"""Latent-diffusion semantic segmentation with two-stage unsupervised domain
adaptation, built to run end to end on a procedural toy benchmark.

Subpackage map: ``diffusion`` (schedules, forward noising, deterministic
reverse steps), ``models`` (encoder / decoder / denoising UNet / domain
discriminator), ``uda`` (class mixing, pseudo labels, losses, per-step
updates, inference), ``data`` (toy benchmark generator and loaders),
``metrics`` (confusion matrix, IoU), ``train`` (stage trainers), ``cli``
(subcommands and persistence formats).
"""

__version__ = "0.1.0"

from .config import RunConfig
from .diffusion import (
    NoiseSchedule,
    build_linear_schedule,
    ddim_step,
    forward_diffuse,
    ldm_loss,
    make_ddim_timesteps,
)
from .models import ArchConfig, build_models
from .uda import ModelPair, SegModel, classmix, infer, pseudo_label, seg_loss

__all__ = [
    "ArchConfig",
    "ModelPair",
    "NoiseSchedule",
    "RunConfig",
    "SegModel",
    "build_linear_schedule",
    "build_models",
    "classmix",
    "ddim_step",
    "forward_diffuse",
    "infer",
    "ldm_loss",
    "make_ddim_timesteps",
    "pseudo_label",
    "seg_loss",
]
