"""Parallel episode collection.

Each environment owns its simulator and its sampler RNG (seeded from the
environment seed), and the policy is queried one environment at a time, so a
batch is identical however the episodes are spread over worker threads.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch

from ..core.config import EnvConfig
from ..core.errors import ContractViolation
from ..diffusion.policy import ChunkSampler, SamplingContext
from ..diffusion.schedule import DenoisingTrace
from .base import TaskSpec, make_env

logger = logging.getLogger("diffusion_datagen.vector")


@dataclass
class Transition:
    """One chunk-level decision and its outcome.

    ``value``, ``advantage`` and ``returns`` stay ``None`` until
    :func:`diffusion_datagen.training.rl.attach_advantages` fills them.
    """
    obs: np.ndarray
    chunk: np.ndarray
    reward: float
    done: bool
    env_id: int
    t: int
    trace: DenoisingTrace | None = None
    log_prob: float | None = None
    value: float | None = None
    advantage: float | None = None
    returns: float | None = None


@dataclass
class EpisodeResult:
    """All transitions of one episode plus its primitive-step record."""
    env_id: int
    task: TaskSpec
    seed: int
    transitions: list[Transition]
    observations: list[np.ndarray]
    actions: list[np.ndarray]
    rewards: list[float]
    final_obs: np.ndarray
    success: bool
    truncated: bool

    @property
    def total_return(self) -> float:
        return float(sum(self.rewards))

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class RolloutBatch:
    episodes: list[EpisodeResult] = field(default_factory=list)

    @property
    def transitions(self) -> list[Transition]:
        return [t for episode in self.episodes for t in episode.transitions]

    @property
    def success_rate(self) -> float:
        return float(np.mean([e.success for e in self.episodes])) if self.episodes else 0.0

    @property
    def mean_return(self) -> float:
        return float(np.mean([e.total_return for e in self.episodes])) if self.episodes else 0.0


def run_episode(
    sampler: ChunkSampler,
    task: TaskSpec,
    seed: int,
    env_id: int = 0,
    env_cfg: EnvConfig | None = None,
    max_steps: int | None = None,
) -> EpisodeResult:
    """Roll one episode; the sampler RNG is seeded from ``seed``."""
    env = make_env(task, env_cfg)
    obs = env.reset(seed)
    generator = torch.Generator().manual_seed(seed)
    limit = task.horizon if max_steps is None else min(max_steps, task.horizon)
    transitions: list[Transition] = []
    observations: list[np.ndarray] = []
    actions: list[np.ndarray] = []
    rewards: list[float] = []
    decision = 0
    done = False
    success = False
    while not done and len(actions) < limit:
        ctx = SamplingContext(task=task, seed=seed, decision=decision, generator=generator)
        output = sampler(obs, ctx)
        steps = env.step(output.chunk)
        current = obs
        for step in steps:
            observations.append(current)
            actions.append(step.action)
            rewards.append(step.reward)
            current = step.observation
        success = steps[-1].success
        done = steps[-1].done
        transitions.append(
            Transition(
                obs=obs,
                chunk=np.asarray(output.chunk, dtype=np.float64),
                reward=float(sum(step.reward for step in steps)),
                done=success,
                env_id=env_id,
                t=decision,
                trace=output.trace,
                log_prob=output.log_prob,
            )
        )
        obs = current
        decision += 1
    return EpisodeResult(
        env_id=env_id,
        task=task,
        seed=seed,
        transitions=transitions,
        observations=observations,
        actions=actions,
        rewards=rewards,
        final_obs=obs,
        success=success,
        truncated=not success,
    )


def vector_rollout(
    sampler: ChunkSampler,
    tasks: Sequence[TaskSpec],
    n_envs: int,
    seeds: Sequence[int],
    max_steps: int | None = None,
    env_cfg: EnvConfig | None = None,
    workers: int = 1,
) -> RolloutBatch:
    """Run one episode per environment; env ``i`` plays ``tasks[i % len(tasks)]``.

    Args:
        sampler: chunk sampler queried once per decision
        tasks: tasks assigned round-robin to environments
        n_envs: number of environments
        seeds: one seed per environment
        max_steps: optional cap on primitive steps per episode
        env_cfg: environment constants
        workers: threads used to step environments

    Returns:
        Episodes ordered by environment id.
    """
    if n_envs < 1:
        raise ContractViolation("n_envs must be at least 1")
    if len(seeds) != n_envs:
        raise ContractViolation(f"Need one seed per env: {len(seeds)} seeds for {n_envs} envs")
    if not tasks:
        raise ContractViolation("At least one task is required")

    def _run(env_id: int) -> EpisodeResult:
        task = tasks[env_id % len(tasks)]
        return run_episode(sampler, task, seeds[env_id], env_id, env_cfg, max_steps)

    if workers > 1 and n_envs > 1:
        with ThreadPoolExecutor(max_workers=min(workers, n_envs)) as pool:
            episodes = list(pool.map(_run, range(n_envs)))
    else:
        episodes = [_run(env_id) for env_id in range(n_envs)]
    batch = RolloutBatch(episodes)
    logger.debug(
        f"Rolled {n_envs} episodes: success {batch.success_rate:.2f}, return {batch.mean_return:.3f}"
    )
    return batch
