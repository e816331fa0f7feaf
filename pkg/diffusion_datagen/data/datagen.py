"""Dataset harvesting from trained expert policies."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence

from ..core.config import EnvConfig
from ..core.errors import ContractViolation, GenerationBudgetError
from ..core.seeds import RUN_STRIDE, seed_block
from ..diffusion.policy import ChunkSampler
from ..envs.base import TaskSpec
from ..envs.vector import EpisodeResult, vector_rollout
from .dataset import Dataset, Source, TrajectoryRecord, make_record

logger = logging.getLogger("diffusion_datagen.datagen")


def episode_record(
    episode: EpisodeResult, source: Source, checkpoint_hash: str | None = None
) -> TrajectoryRecord:
    return make_record(
        episode.task,
        episode.seed,
        episode.observations,
        episode.actions,
        episode.rewards,
        episode.final_obs,
        episode.success,
        source,
        checkpoint_hash,
    )


def generate_dataset(
    policies: Mapping[str, ChunkSampler],
    tasks: Sequence[TaskSpec],
    n_per_task: int,
    source: Source,
    run_seed: int = 0,
    checkpoint_hashes: Mapping[str, str] | None = None,
    retry_factor: int = 10,
    keep_failures: bool = False,
    env_cfg: EnvConfig | None = None,
    workers: int = 1,
) -> Dataset:
    """Collect ``n_per_task`` successful trajectories per task.

    Args:
        policies: expert sampler per task name
        tasks: tasks to harvest
        n_per_task: successful trajectories wanted per task
        source: provenance tag written on every record
        run_seed: selects the run's slice of the generation seed block
        checkpoint_hashes: expert checkpoint SHA-256 per task name
        retry_factor: attempts allowed per requested trajectory
        keep_failures: also store failed episodes (flagged unsuccessful)
        env_cfg: environment constants
        workers: threads per rollout batch

    Raises:
        GenerationBudgetError: a task ran out of attempts
    """
    if n_per_task < 1:
        raise ContractViolation("n_per_task must be at least 1")
    hashes = checkpoint_hashes or {}
    budget = n_per_task * retry_factor
    per_task_stride = RUN_STRIDE // max(len(tasks), 1)
    if budget > per_task_stride:
        raise ContractViolation(f"Attempt budget {budget} exceeds the seed stride {per_task_stride}")
    records: list[TrajectoryRecord] = []
    for index, task in enumerate(tasks):
        if task.name not in policies:
            raise ContractViolation(f"No expert policy for task {task.name}")
        kept: list[TrajectoryRecord] = []
        successes = 0
        attempts = 0
        while successes < n_per_task:
            if attempts >= budget:
                raise GenerationBudgetError(
                    f"{task.name}: only {successes}/{n_per_task} successes in {attempts} "
                    f"attempts (success rate {successes / max(attempts, 1):.1%})"
                )
            count = min(n_per_task - successes, budget - attempts)
            seeds = seed_block("generate", run_seed, count, offset=index * per_task_stride + attempts)
            batch = vector_rollout(
                policies[task.name], [task], count, seeds, env_cfg=env_cfg, workers=workers
            )
            attempts += count
            for episode in batch.episodes:
                if episode.success:
                    successes += 1
                if episode.success or keep_failures:
                    kept.append(episode_record(episode, source, hashes.get(task.name)))
        logger.info(
            f"{task.name}: {successes} trajectories from {attempts} attempts "
            f"({successes / attempts:.1%} success)"
        )
        records += kept
    return Dataset.from_records(records, source, env_cfg)
