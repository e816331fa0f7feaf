"""Student distillation, success-rate evaluation and the held-out-task study."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import torch

from ..core.config import BCConfig, EnvConfig, ModelConfig, StudentConfig
from ..core.errors import ConfigurationError, EmptyDatasetError
from ..core.seeds import check_disjoint, seed_block
from ..data.dataset import Dataset
from ..diffusion.nets import StudentPolicy
from ..diffusion.policy import ChunkSampler, DiffusionPolicy
from ..diffusion.schedule import NoiseSchedule
from ..envs.base import ACTION_DIM, FAMILIES, OBS_DIM, TaskSpec
from ..envs.vector import vector_rollout
from .bc import DemoDataset, train_bc

logger = logging.getLogger("diffusion_datagen.distill")


@dataclass
class StudentResult:
    student: StudentPolicy
    loss_curve: list[float]


def build_student(
    model_cfg: ModelConfig,
    student_cfg: StudentConfig,
    chunk_len: int,
    seed: int,
    dtype: torch.dtype = torch.float64,
) -> StudentPolicy:
    return StudentPolicy(
        chunk_len * ACTION_DIM,
        OBS_DIM,
        n_instructions=len(FAMILIES),
        hidden_dim=model_cfg.hidden_dim,
        n_hidden=model_cfg.n_hidden,
        cond_dim=model_cfg.cond_dim,
        time_embed_dim=model_cfg.time_embed_dim,
        final_gain=model_cfg.final_gain,
        instruction_dim=student_cfg.instruction_dim,
        seed=seed,
        dtype=dtype,
    )


def train_student(
    dataset: Dataset,
    student_cfg: StudentConfig,
    model_cfg: ModelConfig,
    schedule: NoiseSchedule,
    seed: int,
    env_cfg: EnvConfig | None = None,
    dtype: torch.dtype = torch.float64,
) -> StudentResult:
    """Fit a fresh instruction-conditioned diffusion student to ``dataset``.

    Every data source in a comparison goes through this function with the
    same configs and seed, so only the data differs.
    """
    env_cfg = env_cfg or EnvConfig()
    data = dataset.filter(success_only=student_cfg.success_only)
    if len(data) == 0:
        raise EmptyDatasetError(f"No usable trajectories in the {dataset.source} dataset")
    demos = DemoDataset.from_records(data.records, env_cfg.chunk_len, dtype)
    student = build_student(model_cfg, student_cfg, env_cfg.chunk_len, seed, dtype)
    bc_cfg = BCConfig(steps=student_cfg.steps, batch_size=student_cfg.batch_size, lr=student_cfg.lr)
    logger.info(f"Training student on {len(data)} {dataset.source} trajectories ({len(demos)} pairs)")
    result = train_bc(student, demos, bc_cfg, schedule, seed)
    return StudentResult(student=student, loss_curve=result.loss_curve)


def student_policy(student: StudentPolicy, schedule: NoiseSchedule) -> DiffusionPolicy:
    """Deterministic DDIM sampler conditioned on each task's instruction label."""
    return DiffusionPolicy(student, schedule, mode="deterministic", sampler="ddim")


@dataclass
class EvaluationResult:
    per_task: dict[str, float] = field(default_factory=dict)
    episodes: dict[str, int] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.per_task.values()))) if self.per_task else 0.0

    def rows(self) -> list[dict[str, object]]:
        rows: list[dict[str, object]] = [
            {"task": task, "success": rate, "episodes": self.episodes[task]}
            for task, rate in self.per_task.items()
        ]
        rows.append({"task": "mean", "success": self.mean, "episodes": sum(self.episodes.values())})
        return rows


def evaluate(
    policy: ChunkSampler | Mapping[str, ChunkSampler],
    tasks: Sequence[TaskSpec],
    n_episodes: int,
    seeds: Sequence[int] | None = None,
    run_seed: int = 0,
    exclude_seeds: Iterable[int] = (),
    env_cfg: EnvConfig | None = None,
    workers: int = 1,
) -> EvaluationResult:
    """Success rate per task over ``n_episodes`` seeded episodes.

    Args:
        policy: one sampler for every task, or a sampler per task name
        tasks: tasks to evaluate
        n_episodes: episodes per task
        seeds: evaluation seeds; defaults to the run's evaluation block
        run_seed: run seed used for the default evaluation block
        exclude_seeds: seeds consumed by training or generation
        env_cfg: environment constants
        workers: rollout threads

    Raises:
        SeedOverlapError: an evaluation seed appears in ``exclude_seeds``
    """
    eval_seeds = list(seeds) if seeds is not None else seed_block("eval", run_seed, n_episodes)
    check_disjoint(eval_seeds, exclude_seeds)
    result = EvaluationResult()
    for task in tasks:
        sampler = policy[task.name] if isinstance(policy, Mapping) else policy
        batch = vector_rollout(
            sampler, [task], n_episodes, eval_seeds[:n_episodes], env_cfg=env_cfg, workers=workers
        )
        result.per_task[task.name] = batch.success_rate
        result.episodes[task.name] = n_episodes
        logger.info(f"Evaluated {task.name}: success {batch.success_rate:.2f} over {n_episodes} episodes")
    return result


def validate_holdout(train_tasks: Sequence[TaskSpec], holdout_tasks: Sequence[TaskSpec]) -> None:
    if not holdout_tasks:
        raise ConfigurationError("The held-out task set is empty")
    if not train_tasks:
        raise ConfigurationError("The training task set is empty")
    overlap = {t.task_id for t in train_tasks} & {t.task_id for t in holdout_tasks}
    if overlap:
        raise ConfigurationError(f"Task ids {sorted(overlap)} are both training and held-out tasks")


def holdout_study(
    train_tasks: Sequence[TaskSpec],
    holdout_tasks: Sequence[TaskSpec],
    sources: Mapping[str, Dataset],
    student_cfg: StudentConfig,
    model_cfg: ModelConfig,
    schedule: NoiseSchedule,
    seed: int,
    env_cfg: EnvConfig | None = None,
    exclude_seeds: Iterable[int] = (),
    workers: int = 1,
) -> list[dict[str, object]]:
    """Train one student per data source on ``train_tasks``; evaluate zero-shot on ``holdout_tasks``.

    Returns:
        One row per source: ``source``, a success column per held-out task and ``mean``.
    """
    validate_holdout(train_tasks, holdout_tasks)
    excluded = list(exclude_seeds)
    names = [t.name for t in train_tasks]
    rows: list[dict[str, object]] = []
    for label, dataset in sources.items():
        result = train_student(dataset.filter(names), student_cfg, model_cfg, schedule, seed, env_cfg)
        scores = evaluate(
            student_policy(result.student, schedule),
            holdout_tasks,
            student_cfg.eval_episodes,
            run_seed=seed,
            exclude_seeds=excluded,
            env_cfg=env_cfg,
            workers=workers,
        )
        rows.append({"source": label, **scores.per_task, "mean": scores.mean})
        logger.info(f"Held-out success for {label}: {scores.mean:.2f}")
    return rows
