"""Trajectory records and the versioned JSON-lines dataset file.

File layout, one JSON document per line (keys sorted, compact separators)::

    {"header": {...}}                 format version, dimensions, task table
    {"record": {...}}                 one line per trajectory
    ...
    {"sha256": "<hex>"}               digest of every preceding byte

Writing the same dataset twice produces identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import defaultdict
from collections.abc import Iterable
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ValidationError

from ..core.checkpoint import atomic_write_bytes
from ..core.config import EnvConfig
from ..core.errors import (
    ContractViolation,
    DataError,
    DatasetChecksumError,
    DatasetTruncatedError,
    DatasetVersionError,
    EmptyDatasetError,
)
from ..envs.base import ACTION_DIM, OBS_DIM, TaskRegistry, TaskSpec, replay

logger = logging.getLogger("diffusion_datagen.dataset")

FORMAT_VERSION = 1
# a final line starting like this means the checksum line never got written
CONTENT_PREFIXES = (b'{"header":', b'{"record":')
DIGEST_PATTERN = re.compile(r"[0-9a-f]{64}")
Source = Literal["scripted_human", "gaussian_rl", "diffusion_rl", "mixed"]


class TrajectoryStep(BaseModel):
    observation: list[float]
    action: list[float]
    reward: float


class TrajectoryRecord(BaseModel):
    """One episode with its provenance."""
    task: str
    task_id: int
    instruction_id: int
    seed: int
    steps: list[TrajectoryStep]
    final_observation: list[float]
    success: bool
    source: Source
    checkpoint_hash: str | None = None

    def observations(self) -> np.ndarray:
        return np.array([step.observation for step in self.steps]).reshape(-1, OBS_DIM)

    def actions(self) -> np.ndarray:
        return np.array([step.action for step in self.steps]).reshape(-1, ACTION_DIM)

    def rewards(self) -> np.ndarray:
        return np.array([step.reward for step in self.steps])

    def ee_positions(self) -> np.ndarray:
        """End-effector path including the final position, shape ``(T + 1, 2)``."""
        observations = np.vstack([self.observations(), np.asarray(self.final_observation)])
        return observations[:, 0:2]

    def __len__(self) -> int:
        return len(self.steps)


def make_record(
    task: TaskSpec,
    seed: int,
    observations: Iterable[np.ndarray],
    actions: Iterable[np.ndarray],
    rewards: Iterable[float],
    final_observation: np.ndarray,
    success: bool,
    source: Source,
    checkpoint_hash: str | None = None,
) -> TrajectoryRecord:
    steps = [
        TrajectoryStep(
            observation=np.asarray(obs, dtype=np.float64).tolist(),
            action=np.asarray(action, dtype=np.float64).tolist(),
            reward=float(reward),
        )
        for obs, action, reward in zip(observations, actions, rewards, strict=True)
    ]
    return TrajectoryRecord(
        task=task.name,
        task_id=task.task_id,
        instruction_id=task.instruction_id,
        seed=seed,
        steps=steps,
        final_observation=np.asarray(final_observation, dtype=np.float64).tolist(),
        success=success,
        source=source,
        checkpoint_hash=checkpoint_hash,
    )


class TaskEntry(BaseModel):
    name: str
    task_id: int
    family: str
    instruction_id: int


class DatasetHeader(BaseModel):
    format_version: int = FORMAT_VERSION
    source: Source
    obs_dim: int = OBS_DIM
    action_dim: int = ACTION_DIM
    chunk_len: int
    action_limit: float
    dt: float
    tasks: list[TaskEntry]


class Dataset(BaseModel):
    """A header plus trajectory records."""
    header: DatasetHeader
    records: list[TrajectoryRecord]

    @classmethod
    def from_records(
        cls, records: list[TrajectoryRecord], source: Source, env_cfg: EnvConfig | None = None
    ) -> Dataset:
        env_cfg = env_cfg or EnvConfig()
        names = sorted({record.task for record in records}, key=lambda n: TaskRegistry.get_task(n).task_id)
        tasks = [TaskRegistry.get_task(name) for name in names]
        header = DatasetHeader(
            source=source,
            chunk_len=env_cfg.chunk_len,
            action_limit=env_cfg.action_limit,
            dt=env_cfg.dt,
            tasks=[
                TaskEntry(
                    name=t.name, task_id=t.task_id, family=t.family, instruction_id=t.instruction_id
                )
                for t in tasks
            ],
        )
        return cls(header=header, records=list(records))

    @property
    def source(self) -> Source:
        return self.header.source

    def by_task(self) -> dict[str, list[TrajectoryRecord]]:
        grouped: dict[str, list[TrajectoryRecord]] = defaultdict(list)
        for record in self.records:
            grouped[record.task].append(record)
        return dict(grouped)

    def filter(
        self, tasks: Iterable[str] | None = None, success_only: bool = False
    ) -> Dataset:
        wanted = set(tasks) if tasks is not None else None
        kept = [
            record
            for record in self.records
            if (wanted is None or record.task in wanted) and (record.success or not success_only)
        ]
        entries = [entry for entry in self.header.tasks if wanted is None or entry.name in wanted]
        header = self.header.model_copy(update={"tasks": entries})
        return Dataset(header=header, records=kept)

    def __len__(self) -> int:
        return len(self.records)


def _dumps(payload: dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def encode_dataset(dataset: Dataset) -> bytes:
    lines = [_dumps({"header": dataset.header.model_dump(mode="json")})]
    lines += [_dumps({"record": record.model_dump(mode="json")}) for record in dataset.records]
    body = "".join(line + "\n" for line in lines).encode()
    digest = hashlib.sha256(body).hexdigest()
    return body + (_dumps({"sha256": digest}) + "\n").encode()


def write_dataset(path: Path, dataset: Dataset) -> str:
    """Atomically write ``dataset``; returns the file's SHA-256."""
    payload = encode_dataset(dataset)
    atomic_write_bytes(Path(path), payload)
    logger.info(f"Wrote {len(dataset)} trajectories ({dataset.source}) to {path}")
    return hashlib.sha256(payload).hexdigest()


def read_dataset(path: Path) -> Dataset:
    """Load and verify a dataset file.

    Raises:
        DatasetTruncatedError: the file ends before its checksum line
        DatasetChecksumError: the payload or the checksum line was modified
        DatasetVersionError: the format version is not supported
    """
    path = Path(path)
    try:
        payload = path.read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"Dataset not found: {path}") from exc

    if not payload.endswith(b"\n"):
        raise DatasetTruncatedError(f"{path}: file ends mid-line")
    body_end = payload.rfind(b"\n", 0, len(payload) - 1) + 1
    body, tail = payload[:body_end], payload[body_end:]
    if tail.startswith(CONTENT_PREFIXES):
        raise DatasetTruncatedError(f"{path}: missing checksum line")
    try:
        digest = json.loads(tail)["sha256"]
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError) as exc:
        raise DatasetChecksumError(f"{path}: malformed checksum line") from exc
    if not isinstance(digest, str) or DIGEST_PATTERN.fullmatch(digest) is None:
        raise DatasetChecksumError(f"{path}: malformed checksum {digest!r}")
    if hashlib.sha256(body).hexdigest() != digest:
        raise DatasetChecksumError(f"{path}: checksum mismatch")

    lines = body.decode().splitlines()
    if not lines:
        raise DatasetTruncatedError(f"{path}: no header")
    try:
        header_data = json.loads(lines[0])["header"]
        version = header_data.get("format_version")
        if version != FORMAT_VERSION:
            raise DatasetVersionError(
                f"{path}: format version {version} (supported: {FORMAT_VERSION})"
            )
        header = DatasetHeader.model_validate(header_data)
        records = [TrajectoryRecord.model_validate(json.loads(line)["record"]) for line in lines[1:]]
    except (json.JSONDecodeError, KeyError, ValidationError) as exc:
        raise DataError(f"{path}: malformed dataset: {exc}") from exc
    return Dataset(header=header, records=records)


def verify_replay(record: TrajectoryRecord, env_cfg: EnvConfig | None = None) -> list[str]:
    """Replay stored actions from the stored seed and list every disagreement."""
    trace = replay(TaskRegistry.get_task(record.task), record.seed, record.actions(), env_cfg)
    problems: list[str] = []
    if trace.n_steps < len(record):
        problems.append(f"step {trace.n_steps - 1}: episode ended early on replay")
    for index, (obs, step) in enumerate(zip(trace.observations, record.steps, strict=False)):
        if not np.array_equal(obs, np.asarray(step.observation)):
            problems.append(f"step {index}: observation differs")
            return problems
        if trace.rewards[index] != step.reward:
            problems.append(f"step {index}: reward {step.reward} != replayed {trace.rewards[index]}")
    if not problems:
        if not np.array_equal(trace.final_observation, np.asarray(record.final_observation)):
            problems.append("final observation differs")
        if trace.success != record.success:
            problems.append(f"success flag {record.success} != replayed {trace.success}")
    return problems


def mix_datasets(first: Dataset, second: Dataset, ratio: float = 1.0) -> Dataset:
    """Per task, combine ``n`` records of ``first`` with ``round(ratio * n)`` of ``second``.

    ``n`` is the largest count both inputs can supply. Record source tags are
    kept; the combined dataset is tagged ``mixed``.
    """
    if ratio <= 0:
        raise ContractViolation("mix ratio must be positive")
    left, right = first.by_task(), second.by_task()
    records: list[TrajectoryRecord] = []
    for task in sorted(set(left) & set(right), key=lambda n: TaskRegistry.get_task(n).task_id):
        n_first = min(len(left[task]), int(len(right[task]) / ratio))
        n_second = int(round(ratio * n_first))
        records += left[task][:n_first] + right[task][:n_second]
    if not records:
        raise EmptyDatasetError("Datasets share no task with records to mix")
    env_cfg = EnvConfig(
        chunk_len=first.header.chunk_len,
        action_limit=first.header.action_limit,
        dt=first.header.dt,
    )
    return Dataset.from_records(records, "mixed", env_cfg)
