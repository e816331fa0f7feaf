"""Trajectory-quality metrics computed from dataset records alone.

Summary CSV schema (``quality_summary.csv``)::

    source,metric,value

with metrics ``n_trajectories``, ``no_op_total``, ``no_op_mean``,
``mean_squared_jerk``, ``mean_traj_length``, ``mean_curve_std`` and
``mean_y_std``. A metric that is undefined for a dataset (for example jerk
on trajectories shorter than four points) is omitted, never written as 0.

Curve CSV schema (``quality_curves.csv``)::

    source,task,point,dim,mean,std
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ..core.config import QualityConfig
from ..core.errors import ContractViolation, EmptyDatasetError
from ..data.dataset import Dataset, TrajectoryRecord

logger = logging.getLogger("diffusion_datagen.quality")

SUMMARY_CSV = "quality_summary.csv"
CURVES_CSV = "quality_curves.csv"
ACTION_DIMS = ("dx", "dy", "gripper")


def count_noops(record: TrajectoryRecord, vel_eps: float) -> int:
    """Steps that barely move the end effector and keep the gripper command.

    The first step has no predecessor and is never counted.
    """
    if vel_eps <= 0:
        raise ContractViolation("vel_eps must be positive")
    if len(record) < 2:
        return 0
    displacement = np.linalg.norm(np.diff(record.ee_positions(), axis=0), axis=1)
    closed = record.actions()[:, 2] > 0.0
    still = displacement[1:] < vel_eps
    same_grip = closed[1:] == closed[:-1]
    return int(np.sum(still & same_grip))


def squared_jerk(positions: np.ndarray, dt: float) -> np.ndarray | None:
    """Squared jerk magnitude from third forward differences, or ``None`` below four points."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim == 1:
        positions = positions[:, None]
    if len(positions) < 4:
        return None
    jerk = np.diff(positions, n=3, axis=0) / dt**3
    return np.sum(jerk**2, axis=1)


def mean_squared_jerk(record: TrajectoryRecord, dt: float) -> float | None:
    values = squared_jerk(record.ee_positions(), dt)
    return None if values is None else float(values.mean())


def resample(actions: np.ndarray, resolution: int) -> np.ndarray:
    """Linearly resample an action sequence to ``resolution`` points over normalized time."""
    actions = np.asarray(actions, dtype=np.float64)
    if len(actions) == 1:
        return np.repeat(actions, resolution, axis=0)
    source = np.linspace(0.0, 1.0, len(actions))
    target = np.linspace(0.0, 1.0, resolution)
    return np.stack([np.interp(target, source, actions[:, d]) for d in range(actions.shape[1])], axis=1)


@dataclass
class ConsistencyCurve:
    """Per-point, per-dimension mean and standard deviation across trajectories."""
    mean: np.ndarray
    std: np.ndarray


def consistency_curve(records: Sequence[TrajectoryRecord], resolution: int) -> ConsistencyCurve:
    if len(records) < 2:
        raise ContractViolation("A consistency curve needs at least two trajectories")
    if len({r.task for r in records}) != 1:
        raise ContractViolation("Consistency curves compare trajectories of one task")
    stacked = np.stack([resample(r.actions(), resolution) for r in records])
    return ConsistencyCurve(mean=stacked.mean(axis=0), std=stacked.std(axis=0))


@dataclass
class QualityReport:
    source: str
    n_trajectories: int
    no_ops: list[int]
    jerks: list[float | None]
    lengths: list[int]
    curves: dict[str, ConsistencyCurve] = field(default_factory=dict)

    @property
    def no_op_total(self) -> int:
        return int(sum(self.no_ops))

    @property
    def no_op_mean(self) -> float:
        return float(np.mean(self.no_ops))

    @property
    def mean_squared_jerk(self) -> float | None:
        defined = [j for j in self.jerks if j is not None]
        return float(np.mean(defined)) if defined else None

    @property
    def mean_traj_length(self) -> float:
        return float(np.mean(self.lengths))

    @property
    def mean_curve_std(self) -> float | None:
        if not self.curves:
            return None
        return float(np.mean([c.std.mean() for c in self.curves.values()]))

    @property
    def mean_y_std(self) -> float | None:
        if not self.curves:
            return None
        return float(np.mean([c.std[:, 1].mean() for c in self.curves.values()]))

    def summary(self) -> dict[str, float]:
        values: dict[str, float | None] = {
            "n_trajectories": float(self.n_trajectories),
            "no_op_total": float(self.no_op_total),
            "no_op_mean": self.no_op_mean,
            "mean_squared_jerk": self.mean_squared_jerk,
            "mean_traj_length": self.mean_traj_length,
            "mean_curve_std": self.mean_curve_std,
            "mean_y_std": self.mean_y_std,
        }
        return {key: value for key, value in values.items() if value is not None}


def build_report(dataset: Dataset, cfg: QualityConfig | None = None) -> QualityReport:
    """Compute every metric for one dataset."""
    cfg = cfg or QualityConfig()
    if not dataset.records:
        raise EmptyDatasetError(f"Cannot analyze an empty {dataset.source} dataset")
    report = QualityReport(
        source=dataset.source,
        n_trajectories=len(dataset.records),
        no_ops=[count_noops(r, cfg.vel_eps) for r in dataset.records],
        jerks=[mean_squared_jerk(r, cfg.dt) for r in dataset.records],
        lengths=[len(r) for r in dataset.records],
    )
    for task, records in dataset.by_task().items():
        if len(records) >= 2:
            report.curves[task] = consistency_curve(records, cfg.resolution)
    logger.info(
        f"{dataset.source}: {report.n_trajectories} trajectories, "
        f"{report.no_op_total} no-ops, mean length {report.mean_traj_length:.1f}"
    )
    return report


def summary_frame(reports: Sequence[QualityReport]) -> pd.DataFrame:
    rows = [
        {"source": report.source, "metric": metric, "value": value}
        for report in reports
        for metric, value in report.summary().items()
    ]
    return pd.DataFrame(rows, columns=["source", "metric", "value"])


def curves_frame(reports: Sequence[QualityReport]) -> pd.DataFrame:
    rows = []
    for report in reports:
        for task, curve in sorted(report.curves.items()):
            for point in range(curve.mean.shape[0]):
                for dim, name in enumerate(ACTION_DIMS):
                    rows.append(
                        {
                            "source": report.source,
                            "task": task,
                            "point": point,
                            "dim": name,
                            "mean": float(curve.mean[point, dim]),
                            "std": float(curve.std[point, dim]),
                        }
                    )
    return pd.DataFrame(rows, columns=["source", "task", "point", "dim", "mean", "std"])


def emit_report(reports: Sequence[QualityReport], out_dir: Path, charts: bool = True) -> dict[str, Path]:
    """Write the summary and curve CSVs plus best-effort SVG charts.

    Returns:
        Output paths by role.
    """
    from .charts import plot_consistency, plot_summary

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"summary": out_dir / SUMMARY_CSV, "curves": out_dir / CURVES_CSV}
    summary_frame(reports).to_csv(paths["summary"], index=False)
    curves_frame(reports).to_csv(paths["curves"], index=False)
    if charts:
        try:
            paths.update(plot_summary(reports, out_dir))
            paths.update(plot_consistency(reports, out_dir))
        except (ValueError, RuntimeError, OSError) as exc:
            logger.warning(f"Skipping charts: {exc}")
    logger.info(f"Wrote quality report for {len(reports)} dataset(s) to {out_dir}")
    return paths


def read_report_csv(path: Path) -> dict[str, dict[str, float]]:
    """Parse a summary CSV back into ``{source: {metric: value}}``."""
    frame = pd.read_csv(path, float_precision="round_trip")
    table: dict[str, dict[str, float]] = {}
    for row in frame.itertuples(index=False):
        table.setdefault(str(row.source), {})[str(row.metric)] = float(row.value)
    return table
