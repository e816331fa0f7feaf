"""Closed-form diffusion math.

Step levels run from ``0`` (clean action, ``alpha_bar == 1``) to ``K``. The
stored vectors are 0-based, so ``alpha_bar[k - 1]`` belongs to level ``k`` and
``sampler_grid`` holds 0-based indices (level ``index + 1``). Every function
accepts a level as a Python int or as a LongTensor with one level per row.
Action chunks are flat ``H * A`` vectors in the last dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import torch

from ..core.config import ScheduleConfig
from ..core.errors import ConfigurationError, ContractViolation

Level = int | torch.Tensor
SamplerKind = Literal["ddim", "ddpm"]

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NoiseSchedule:
    """Diffusion coefficients for training levels and the rollout grid."""
    k_train: int
    beta: torch.Tensor
    alpha_bar: torch.Tensor
    posterior_var: torch.Tensor
    sampler_grid: tuple[int, ...]
    variance_floor: float
    alpha_bar_levels: torch.Tensor = field(repr=False)

    @property
    def sampler_levels(self) -> tuple[int, ...]:
        """Grid levels in ascending order."""
        return tuple(index + 1 for index in self.sampler_grid)

    @property
    def n_sampler_steps(self) -> int:
        return len(self.sampler_grid)


def make_schedule(
    k_train: int,
    beta_start: float,
    beta_end: float,
    n_sampler_steps: int,
    variance_floor: float = 1e-6,
) -> NoiseSchedule:
    """Build a linear-beta schedule with an evenly spaced DDIM grid.

    Args:
        k_train: number of training levels K
        beta_start: beta of level 1
        beta_end: beta of level K
        n_sampler_steps: size of the rollout grid (always contains level K)
        variance_floor: lower clamp on reverse-step variances

    Returns:
        The schedule, in float64.
    """
    if k_train < 1:
        raise ConfigurationError(f"k_train must be positive, got {k_train}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigurationError(
            f"Betas must satisfy 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    if not 1 <= n_sampler_steps <= k_train:
        raise ConfigurationError(
            f"n_sampler_steps must lie in [1, {k_train}], got {n_sampler_steps}"
        )
    if variance_floor <= 0.0:
        raise ConfigurationError("variance_floor must be positive")

    beta = torch.linspace(beta_start, beta_end, k_train, dtype=torch.float64)
    alpha_bar = torch.cumprod(1.0 - beta, dim=0)
    alpha_bar_levels = torch.cat([torch.ones(1, dtype=torch.float64), alpha_bar])
    prev = alpha_bar_levels[:-1]
    raw_var = beta * (1.0 - prev) / (1.0 - alpha_bar)
    posterior_var = torch.clamp(raw_var, min=variance_floor)

    ratio = k_train // n_sampler_steps
    levels = sorted(k_train - j * ratio for j in range(n_sampler_steps))
    grid = tuple(level - 1 for level in levels)

    return NoiseSchedule(
        k_train=k_train,
        beta=beta,
        alpha_bar=alpha_bar,
        posterior_var=posterior_var,
        sampler_grid=grid,
        variance_floor=variance_floor,
        alpha_bar_levels=alpha_bar_levels,
    )


def schedule_from_config(cfg: ScheduleConfig) -> NoiseSchedule:
    return make_schedule(
        cfg.k_train, cfg.beta_start, cfg.beta_end, cfg.n_sampler_steps, cfg.variance_floor
    )


def _check_levels(schedule: NoiseSchedule, k: Level, low: int) -> None:
    values = [k] if isinstance(k, int) else k.reshape(-1).tolist()
    for value in values:
        if not low <= int(value) <= schedule.k_train:
            raise ContractViolation(f"Level {value} outside [{low}, {schedule.k_train}]")


def _coef(vec: torch.Tensor, k: Level, like: torch.Tensor) -> torch.Tensor:
    """Gather ``vec[k]`` shaped to broadcast against ``like`` (rows x dims)."""
    if isinstance(k, int):
        return vec[k].to(dtype=like.dtype)
    return vec[k.long()].to(dtype=like.dtype).unsqueeze(-1)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"{what}: shape {tuple(a.shape)} != {tuple(b.shape)}")


def alpha_bar_at(schedule: NoiseSchedule, k: Level) -> torch.Tensor:
    """``alpha_bar`` of level ``k`` (1 for level 0)."""
    if isinstance(k, int):
        return schedule.alpha_bar_levels[k]
    return schedule.alpha_bar_levels[k.long()]


def forward_noise(
    schedule: NoiseSchedule, a0: torch.Tensor, k: Level, eps: torch.Tensor
) -> torch.Tensor:
    """``sqrt(alpha_bar_k) * a0 + sqrt(1 - alpha_bar_k) * eps``."""
    _check_same_shape(a0, eps, "forward_noise")
    _check_levels(schedule, k, 0)
    ab = _coef(schedule.alpha_bar_levels, k, a0)
    return torch.sqrt(ab) * a0 + torch.sqrt(1.0 - ab) * eps


def recover_noise(
    schedule: NoiseSchedule, a_k: torch.Tensor, a0: torch.Tensor, k: Level
) -> torch.Tensor:
    """Invert :func:`forward_noise` for ``eps`` (levels >= 1)."""
    _check_levels(schedule, k, 1)
    ab = _coef(schedule.alpha_bar_levels, k, a0)
    return (a_k - torch.sqrt(ab) * a0) / torch.sqrt(1.0 - ab)


def ddpm_posterior_mean(
    schedule: NoiseSchedule, k: Level, a_k: torch.Tensor, eps_pred: torch.Tensor
) -> torch.Tensor:
    """DDPM reverse mean of level ``k -> k - 1`` in noise-prediction form."""
    _check_same_shape(a_k, eps_pred, "ddpm_posterior_mean")
    _check_levels(schedule, k, 1)
    index = k - 1
    beta = _coef(schedule.beta, index, a_k)
    ab = _coef(schedule.alpha_bar, index, a_k)
    return (a_k - beta / torch.sqrt(1.0 - ab) * eps_pred) / torch.sqrt(1.0 - beta)


def ddpm_variance(schedule: NoiseSchedule, k: Level, like: torch.Tensor) -> torch.Tensor:
    """Floored posterior variance of level ``k``, one scalar per row."""
    index = k - 1
    if isinstance(index, int):
        return schedule.posterior_var[index].to(dtype=like.dtype)
    return schedule.posterior_var[index.long()].to(dtype=like.dtype)


def ddpm_reverse_step(
    schedule: NoiseSchedule,
    k: Level,
    a_k: torch.Tensor,
    eps_pred: torch.Tensor,
    z: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """One stochastic DDPM step; level 1 is deterministic.

    Returns:
        (a_{k-1}, mean_k, var_k)
    """
    _check_same_shape(a_k, z, "ddpm_reverse_step")
    mean = ddpm_posterior_mean(schedule, k, a_k, eps_pred)
    var = ddpm_variance(schedule, k, a_k)
    if isinstance(k, int):
        scale = torch.sqrt(var) if k > 1 else torch.zeros_like(var)
        return mean + scale * z, mean, var
    scale = torch.where(k > 1, torch.sqrt(var), torch.zeros_like(var)).unsqueeze(-1)
    return mean + scale * z, mean, var


def _check_on_grid(schedule: NoiseSchedule, k_from: Level, k_to: Level) -> None:
    allowed = set(schedule.sampler_levels)
    high, low = torch.broadcast_tensors(torch.as_tensor(k_from), torch.as_tensor(k_to))
    for k_hi, k_lo in zip(high.reshape(-1).tolist(), low.reshape(-1).tolist(), strict=True):
        if int(k_hi) not in allowed:
            raise ContractViolation(f"k_from={k_hi} is not on the sampler grid")
        if int(k_lo) != 0 and int(k_lo) not in allowed:
            raise ContractViolation(f"k_to={k_lo} is not on the sampler grid")
        if not int(k_hi) > int(k_lo) >= 0:
            raise ContractViolation(f"DDIM needs k_from > k_to >= 0, got {k_hi} -> {k_lo}")


def ddim_step(
    schedule: NoiseSchedule,
    k_from: Level,
    k_to: Level,
    a_k: torch.Tensor,
    eps_pred: torch.Tensor,
) -> torch.Tensor:
    """Deterministic (eta = 0) DDIM update between two grid levels."""
    _check_same_shape(a_k, eps_pred, "ddim_step")
    _check_on_grid(schedule, k_from, k_to)
    ab_from = _coef(schedule.alpha_bar_levels, k_from, a_k)
    ab_to = _coef(schedule.alpha_bar_levels, k_to, a_k)
    a0_hat = (a_k - torch.sqrt(1.0 - ab_from) * eps_pred) / torch.sqrt(ab_from)
    return torch.sqrt(ab_to) * a0_hat + torch.sqrt(1.0 - ab_to) * eps_pred


def coarse_posterior_var(
    schedule: NoiseSchedule, k_from: Level, k_to: Level, like: torch.Tensor
) -> torch.Tensor:
    """DDPM-style variance of a ``k_from -> k_to`` jump, floored."""
    ab_from = alpha_bar_at(schedule, k_from).to(dtype=like.dtype)
    ab_to = alpha_bar_at(schedule, k_to).to(dtype=like.dtype)
    var = (1.0 - ab_to) / (1.0 - ab_from) * (1.0 - ab_from / ab_to)
    return torch.clamp(var, min=schedule.variance_floor)


def step_log_likelihood(
    mean: torch.Tensor, var: torch.Tensor | float, a_prev: torch.Tensor
) -> torch.Tensor:
    """Log-density of ``a_prev`` under ``N(mean, var * I)``, summed over the last dim.

    ``var`` is a scalar or one value per row.
    """
    _check_same_shape(mean, a_prev, "step_log_likelihood")
    var_t = torch.as_tensor(var, dtype=mean.dtype)
    if var_t.dim() > 0 and var_t.dim() == mean.dim() - 1:
        var_t = var_t.unsqueeze(-1)
    dim = mean.shape[-1]
    sq = ((a_prev - mean) ** 2 / var_t).sum(dim=-1)
    log_var = torch.log(var_t).squeeze(-1) if var_t.dim() > 0 else torch.log(var_t)
    return -0.5 * (sq + dim * (LOG_2PI + log_var))


def sampler_chain(schedule: NoiseSchedule, sampler: SamplerKind = "ddim") -> list[tuple[int, int]]:
    """Level transitions a rollout walks through, from level K down to 0."""
    if sampler == "ddpm":
        return [(k, k - 1) for k in range(schedule.k_train, 0, -1)]
    levels = sorted(schedule.sampler_levels, reverse=True) + [0]
    return list(zip(levels[:-1], levels[1:], strict=True))


@dataclass(frozen=True)
class DenoisingTrace:
    """A recorded reverse chain ``a_K -> a_0`` for one action chunk.

    Row ``j`` holds the level ``k_from[j]``, the chunk ``a_k[j]`` at that level,
    the reverse mean and variance used, and the injected noise; ``a_next[j]``
    is ``mean[j] + sqrt(var[j]) * noise[j]``.
    """
    k_from: torch.Tensor
    k_to: torch.Tensor
    a_k: torch.Tensor
    mean: torch.Tensor
    var: torch.Tensor
    noise: torch.Tensor
    a_0: torch.Tensor

    @property
    def a_next(self) -> torch.Tensor:
        return torch.cat([self.a_k[1:], self.a_0.unsqueeze(0)], dim=0)

    @property
    def steps(self) -> list[tuple[int, torch.Tensor, torch.Tensor, float]]:
        return [
            (int(self.k_from[j]), self.a_k[j], self.mean[j], float(self.var[j]))
            for j in range(len(self.k_from))
        ]

    def __len__(self) -> int:
        return int(self.k_from.shape[0])
