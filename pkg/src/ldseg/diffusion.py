"""Diffusion numerics: noise schedules, closed-form forward noising, the
noise-prediction loss, and deterministic reverse (eta=0) stepping.

Everything here is a pure function of its inputs. No function owns
randomness; noise realizations are always passed in by the caller.
Timesteps are zero-based: ``t`` ranges over ``0 .. T-1``, and ``t_prev=-1``
marks the final reverse step (full signal retention).

Coefficient arithmetic runs in float64 and results are cast back to the
input dtype, so float32 latents do not accumulate schedule rounding error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor

from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep variance schedule with cached cumulative products.

    ``beta[t]`` is the variance added at step t, ``alpha[t] = 1 - beta[t]``,
    and ``alpha_bar[t]`` is the running product of alpha through step t
    (the fraction of signal variance surviving t+1 noising steps).
    Arrays are float64 of length ``T``.
    """

    T: int
    beta: Tensor
    alpha: Tensor
    alpha_bar: Tensor

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar for a step index, where t=-1 means "fully denoised"."""
        if t == -1:
            return 1.0
        if not 0 <= t < self.T:
            raise IndexError(f"timestep {t} outside [0, {self.T})")
        return float(self.alpha_bar[t])


@dataclass(frozen=True)
class DiffusionSample:
    """A noised latent together with the step index and noise that made it."""

    x_t: Tensor
    t: int
    eps: Tensor

    def __post_init__(self) -> None:
        if self.x_t.shape != self.eps.shape:
            raise ContractError(
                f"x_t shape {tuple(self.x_t.shape)} != eps shape {tuple(self.eps.shape)}"
            )
        if self.t < 0:
            raise ContractError(f"timestep {self.t} is negative")


def build_linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Arithmetic-progression beta schedule from beta_start to beta_end inclusive."""
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    alpha = 1.0 - beta
    alpha_bar = torch.cumprod(alpha, dim=0)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _gather_alpha_bar(sched: NoiseSchedule, t: int | Tensor, ndim: int) -> Tensor:
    """alpha_bar[t] shaped to broadcast over a rank-``ndim`` batch tensor."""
    if isinstance(t, Tensor):
        if t.numel() > 1 and ((t < 0).any() or (t >= sched.T).any()):
            raise IndexError(f"timesteps outside [0, {sched.T})")
        ab = sched.alpha_bar[t.long()]
        return ab.reshape(ab.shape + (1,) * (ndim - ab.ndim))
    if not 0 <= t < sched.T:
        raise IndexError(f"timestep {t} outside [0, {sched.T})")
    return sched.alpha_bar[t]


def forward_diffuse(x0: Tensor, t: int | Tensor, eps: Tensor, sched: NoiseSchedule) -> Tensor:
    """Closed-form forward noising: sqrt(ab_t)*x0 + sqrt(1-ab_t)*eps.

    ``t`` may be a scalar index or a rank-1 tensor of per-sample indices
    when ``x0`` carries a leading batch dimension.
    """
    if x0.shape != eps.shape:
        raise ContractError(
            f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}"
        )
    ab = _gather_alpha_bar(sched, t, x0.ndim)
    out = torch.sqrt(ab) * x0.double() + torch.sqrt(1.0 - ab) * eps.double()
    return out.to(x0.dtype)


def ldm_loss(eps_true: Tensor, eps_pred: Tensor) -> Tensor:
    """Mean squared error between true and predicted noise, over all elements."""
    if eps_true.shape != eps_pred.shape:
        raise ContractError(
            f"eps_true shape {tuple(eps_true.shape)} != eps_pred shape {tuple(eps_pred.shape)}"
        )
    return (eps_pred - eps_true).square().mean()


def ddim_step(x_t: Tensor, eps_pred: Tensor, t: int, t_prev: int, sched: NoiseSchedule) -> Tensor:
    """One deterministic reverse step from index t to t_prev (t_prev=-1 final).

    Recovers the clean-sample estimate from the noise prediction, then
    re-noises it to the t_prev marginal with the same predicted noise.
    """
    if x_t.shape != eps_pred.shape:
        raise ContractError(
            f"x_t shape {tuple(x_t.shape)} != eps_pred shape {tuple(eps_pred.shape)}"
        )
    if not 0 <= t < sched.T:
        raise ContractError(f"timestep t={t} outside [0, {sched.T})")
    if t_prev != -1 and not 0 <= t_prev < t:
        raise ContractError(f"need t_prev in [0, t) or -1, got t_prev={t_prev}, t={t}")
    ab_t = sched.alpha_bar_at(t)
    ab_prev = sched.alpha_bar_at(t_prev)
    x = x_t.double()
    e = eps_pred.double()
    x0_hat = (x - math.sqrt(1.0 - ab_t) * e) / math.sqrt(ab_t)
    out = math.sqrt(ab_prev) * x0_hat + math.sqrt(1.0 - ab_prev) * e
    return out.to(x_t.dtype)


def make_ddim_timesteps(T: int, n_steps: int) -> list[int]:
    """n_steps indices spaced as evenly as possible over [0, T-1], descending.

    The first entry is always T-1; consecutive gaps differ by at most one.
    """
    if not 1 <= n_steps <= T:
        raise ConfigError(f"n_steps must be in [1, T={T}], got {n_steps}")
    if n_steps == 1:
        return [T - 1]
    grid = torch.linspace(T - 1, 0, n_steps, dtype=torch.float64)
    ts = [int(v) for v in grid.round().long()]
    # round() cannot collapse entries because the spacing is >= 1
    assert all(a > b for a, b in zip(ts, ts[1:]))
    return ts
