"""Behaviour-cloning warm start for the diffusion policy and the Gaussian baseline."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import torch

from ..core.config import BCConfig
from ..core.errors import (
    ContractViolation,
    EmptyDatasetError,
    TrainingDivergedError,
    WarmStartGateError,
)
from ..data.dataset import TrajectoryRecord
from ..diffusion.nets import GaussianHead, NoisePredictor, gaussian_log_prob
from ..diffusion.schedule import NoiseSchedule, forward_noise
from ..envs.base import ACTION_DIM

logger = logging.getLogger("diffusion_datagen.bc")


def record_chunks(record: TrajectoryRecord, chunk_len: int) -> tuple[np.ndarray, np.ndarray]:
    """(observation, chunk) pairs for every timestep; chunks past the end repeat the last action."""
    actions = record.actions()
    n = len(actions)
    index = np.minimum(np.arange(n)[:, None] + np.arange(chunk_len)[None, :], n - 1)
    return record.observations(), actions[index].reshape(n, chunk_len * ACTION_DIM)


@dataclass
class DemoDataset:
    """Flattened (observation, chunk, instruction) training pairs."""
    records: list[TrajectoryRecord]
    obs: torch.Tensor
    chunks: torch.Tensor
    instructions: torch.Tensor

    @classmethod
    def from_records(
        cls,
        records: Sequence[TrajectoryRecord],
        chunk_len: int,
        dtype: torch.dtype = torch.float64,
        require_success: bool = True,
    ) -> DemoDataset:
        records = [r for r in records if len(r) > 0]
        if not records:
            raise EmptyDatasetError("No trajectories to train on")
        if require_success and not all(r.success for r in records):
            raise ContractViolation("Training records must all be successful")
        obs_parts, chunk_parts, instr_parts = [], [], []
        for record in records:
            obs, chunks = record_chunks(record, chunk_len)
            obs_parts.append(obs)
            chunk_parts.append(chunks)
            instr_parts.append(np.full(len(obs), record.instruction_id))
        return cls(
            records=list(records),
            obs=torch.as_tensor(np.concatenate(obs_parts), dtype=dtype),
            chunks=torch.as_tensor(np.concatenate(chunk_parts), dtype=dtype),
            instructions=torch.as_tensor(np.concatenate(instr_parts), dtype=torch.long),
        )

    def __len__(self) -> int:
        return int(self.obs.shape[0])


def bc_loss(
    net: NoisePredictor,
    schedule: NoiseSchedule,
    obs: torch.Tensor,
    a0: torch.Tensor,
    generator: torch.Generator,
    instruction: torch.Tensor | None = None,
) -> torch.Tensor:
    """Simplified denoising objective ``E ||eps - eps_theta(a_k, s, k)||^2``."""
    if a0.shape[0] == 0:
        raise ContractViolation("bc_loss needs a nonempty batch")
    k = torch.randint(1, schedule.k_train + 1, (a0.shape[0],), generator=generator)
    eps = torch.randn(a0.shape, generator=generator, dtype=a0.dtype)
    a_k = forward_noise(schedule, a0, k, eps)
    residual = eps - net(a_k, obs, k, instruction)
    return (residual**2).sum(dim=-1).mean()


def gaussian_nll(head: GaussianHead, obs: torch.Tensor, a0: torch.Tensor) -> torch.Tensor:
    return -gaussian_log_prob(head, obs, a0).mean()


@dataclass
class BCResult:
    loss_curve: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1] if self.loss_curve else float("nan")


def train_bc(
    net: NoisePredictor | GaussianHead,
    dataset: DemoDataset,
    cfg: BCConfig,
    schedule: NoiseSchedule | None = None,
    seed: int = 0,
) -> BCResult:
    """Minibatch Adam on the denoising loss (or Gaussian NLL for a Gaussian head).

    Args:
        net: network trained in place
        dataset: demonstration pairs
        cfg: step budget, batch size, learning rate and divergence rule
        schedule: noise schedule, required for noise predictors
        seed: drives batch sampling and diffusion noise

    Returns:
        The per-step loss curve.

    Raises:
        TrainingDivergedError: loss above ``divergence_factor`` times the first
            loss for ``divergence_patience`` consecutive steps
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("Empty demonstration dataset")
    diffusion = isinstance(net, NoisePredictor)
    if diffusion and schedule is None:
        raise ContractViolation("A noise schedule is required to train a noise predictor")
    uses_instruction = diffusion and net.instruction_embed is not None
    generator = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    dtype = next(net.parameters()).dtype
    obs_all = dataset.obs.to(dtype)
    chunks_all = dataset.chunks.to(dtype)
    result = BCResult()
    initial: float | None = None
    above = 0
    net.train()
    for step in range(cfg.steps):
        index = torch.randint(len(dataset), (min(cfg.batch_size, len(dataset)),), generator=generator)
        obs, a0 = obs_all[index], chunks_all[index]
        if diffusion:
            instr = dataset.instructions[index] if uses_instruction else None
            loss = bc_loss(net, schedule, obs, a0, generator, instr)
        else:
            loss = gaussian_nll(net, obs, a0)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        value = float(loss.detach())
        result.loss_curve.append(value)
        if initial is None:
            initial = value
        above = above + 1 if value > cfg.divergence_factor * abs(initial) else 0
        if above >= cfg.divergence_patience or not np.isfinite(value):
            raise TrainingDivergedError(
                f"BC diverged at step {step}: loss {value:.4g} vs initial {initial:.4g}"
            )
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            logger.info(f"BC step {step}/{cfg.steps}: loss {value:.5f}")
    net.eval()
    return result


def check_warm_start(success_rate: float, floor: float, allow_weak_start: bool = False) -> None:
    """Refuse to start RL from a policy below the success floor."""
    if success_rate >= floor:
        logger.info(f"Warm start passes the gate: success {success_rate:.2f} >= {floor:.2f}")
        return
    message = f"Warm-started policy success {success_rate:.2f} is below the floor {floor:.2f}"
    if allow_weak_start:
        logger.warning(message + "; continuing because the gate was bypassed")
        return
    raise WarmStartGateError(message)
