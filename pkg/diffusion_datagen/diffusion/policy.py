"""Chunk samplers: the diffusion policy and the Gaussian baseline.

A sampler maps ``(observation, context)`` to a :class:`PolicyOutput`. Rollout
code only depends on that call signature, so scripted replay, the diffusion
expert and the Gaussian baseline are interchangeable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal, Protocol

import numpy as np
import torch

from ..core.errors import ContractViolation
from .nets import GaussianHead, NoisePredictor, gaussian_sample
from .schedule import (
    DenoisingTrace,
    NoiseSchedule,
    SamplerKind,
    coarse_posterior_var,
    ddim_step,
    ddpm_posterior_mean,
    ddpm_variance,
    sampler_chain,
)

if TYPE_CHECKING:
    from ..envs.base import TaskSpec

SampleMode = Literal["deterministic", "stochastic"]


@dataclass
class SamplingContext:
    """Per-decision information handed to a sampler."""
    task: TaskSpec
    seed: int
    decision: int
    generator: torch.Generator


@dataclass
class PolicyOutput:
    """One emitted action chunk (flat, unclipped) plus what PPO needs to score it."""
    chunk: np.ndarray
    trace: DenoisingTrace | None = None
    log_prob: float | None = None


class ChunkSampler(Protocol):
    def __call__(self, obs: np.ndarray, ctx: SamplingContext) -> PolicyOutput: ...


@torch.no_grad()
def sample_chunks(
    net: NoisePredictor,
    schedule: NoiseSchedule,
    obs: torch.Tensor,
    generator: torch.Generator,
    mode: SampleMode = "deterministic",
    sampler: SamplerKind = "ddim",
    exploration_std_min: float = 0.0,
    instruction: torch.Tensor | None = None,
) -> tuple[torch.Tensor, list[DenoisingTrace]]:
    """Run the reverse chain for a batch of observations.

    Stochastic mode injects noise on every transition, including the last,
    with variance ``max(chain variance, exploration_std_min**2)``.
    Deterministic DDIM is the eta = 0 map from the initial noise.

    Returns:
        (a_0 of shape (B, D), one trace per row)
    """
    if obs.dim() != 2:
        raise ContractViolation("sample_chunks expects a (batch, obs_dim) tensor")
    dtype = next(net.parameters()).dtype
    obs = obs.to(dtype)
    batch = obs.shape[0]
    a = torch.randn((batch, net.chunk_dim), generator=generator, dtype=dtype)
    chain = sampler_chain(schedule, sampler)
    k_from = torch.tensor([pair[0] for pair in chain])
    k_to = torch.tensor([pair[1] for pair in chain])
    a_ks, means, variances, noises = [], [], [], []
    min_var = exploration_std_min**2
    for k_hi, k_lo in chain:
        eps = net(a, obs, k_hi, instruction)
        if sampler == "ddim":
            mean = ddim_step(schedule, k_hi, k_lo, a, eps)
            var = coarse_posterior_var(schedule, k_hi, k_lo, a)
        else:
            mean = ddpm_posterior_mean(schedule, k_hi, a, eps)
            var = ddpm_variance(schedule, k_hi, a)
        if mode == "stochastic":
            var = torch.clamp(var, min=min_var)
            z = torch.randn(a.shape, generator=generator, dtype=dtype)
        else:
            z = torch.zeros_like(a)
        a_ks.append(a)
        means.append(mean)
        variances.append(var.expand(batch))
        noises.append(z)
        a = mean + torch.sqrt(var) * z
    traces = [
        DenoisingTrace(
            k_from=k_from,
            k_to=k_to,
            a_k=torch.stack([x[row] for x in a_ks]),
            mean=torch.stack([x[row] for x in means]),
            var=torch.stack([x[row] for x in variances]),
            noise=torch.stack([x[row] for x in noises]),
            a_0=a[row],
        )
        for row in range(batch)
    ]
    return a, traces


class DiffusionPolicy:
    """Diffusion chunk sampler around a noise predictor."""

    def __init__(
        self,
        net: NoisePredictor,
        schedule: NoiseSchedule,
        mode: SampleMode = "deterministic",
        sampler: SamplerKind = "ddim",
        exploration_std_min: float = 0.0,
        instruction_of: dict[str, int] | None = None,
    ):
        self.net = net
        self.schedule = schedule
        self.mode = mode
        self.sampler = sampler
        self.exploration_std_min = exploration_std_min
        self.instruction_of = instruction_of

    def _instruction(self, ctx: SamplingContext) -> torch.Tensor | None:
        if self.net.instruction_embed is None:
            return None
        if self.instruction_of is not None:
            return torch.tensor([self.instruction_of[ctx.task.name]])
        return torch.tensor([ctx.task.instruction_id])

    def __call__(self, obs: np.ndarray, ctx: SamplingContext) -> PolicyOutput:
        obs_t = torch.as_tensor(np.asarray(obs, dtype=np.float64)).unsqueeze(0)
        a0, traces = sample_chunks(
            self.net,
            self.schedule,
            obs_t,
            ctx.generator,
            mode=self.mode,
            sampler=self.sampler,
            exploration_std_min=self.exploration_std_min,
            instruction=self._instruction(ctx),
        )
        return PolicyOutput(chunk=a0[0].double().numpy().copy(), trace=traces[0])


class GaussianPolicy:
    """Gaussian-head chunk sampler (stochastic or mean action)."""

    def __init__(self, head: GaussianHead, mode: SampleMode = "stochastic"):
        self.head = head
        self.mode = mode

    @torch.no_grad()
    def __call__(self, obs: np.ndarray, ctx: SamplingContext) -> PolicyOutput:
        dtype = next(self.head.parameters()).dtype
        obs_t = torch.as_tensor(np.asarray(obs, dtype=np.float64)).to(dtype).unsqueeze(0)
        if self.mode == "deterministic":
            chunk = self.head(obs_t)[0]
            return PolicyOutput(chunk=chunk.double().numpy().copy())
        chunk, log_prob = gaussian_sample(self.head, obs_t, ctx.generator)
        return PolicyOutput(chunk=chunk[0].double().numpy().copy(), log_prob=float(log_prob[0]))


@torch.no_grad()
def variance_probe(
    net: NoisePredictor,
    schedule: NoiseSchedule,
    obs: np.ndarray,
    n_samples: int,
    seed: int,
    instruction: int | None = None,
) -> float:
    """Mean per-dimension variance of deterministic DDIM chunks at one state.

    Different initial noise draws land on different modes; a collapsed
    policy maps them all to the same chunk.
    """
    obs_t = torch.as_tensor(np.asarray(obs, dtype=np.float64)).unsqueeze(0).repeat(n_samples, 1)
    instr = None
    if net.instruction_embed is not None:
        instr = torch.full((n_samples,), int(instruction or 0))
    generator = torch.Generator().manual_seed(seed)
    a0, _ = sample_chunks(net, schedule, obs_t, generator, instruction=instr)
    return float(a0.var(dim=0, unbiased=False).mean())
