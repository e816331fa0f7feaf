"""Static SVG charts for quality reports."""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path
from typing import TYPE_CHECKING

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "diffusion-datagen"
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

if TYPE_CHECKING:
    from .quality import QualityReport

BAR_METRICS = (
    ("no_op_total", "No-op actions"),
    ("mean_squared_jerk", "Mean squared jerk"),
    ("mean_traj_length", "Mean trajectory length"),
    ("mean_curve_std", "Mean action std"),
)
SVG_METADATA = {"Date": None}


def plot_summary(reports: Sequence[QualityReport], out_dir: Path) -> dict[str, Path]:
    """One bar panel per headline metric, one bar per source."""
    fig, axes = plt.subplots(1, len(BAR_METRICS), figsize=(4 * len(BAR_METRICS), 4))
    labels = [report.source for report in reports]
    x = np.arange(len(labels))
    for ax, (metric, title) in zip(axes, BAR_METRICS, strict=True):
        values = [report.summary().get(metric, np.nan) for report in reports]
        ax.bar(x, values)
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=20)
        ax.set_title(title)
        ax.grid(True, axis="y")
    fig.tight_layout()
    path = Path(out_dir) / "quality_summary.svg"
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    return {"summary_chart": path}


def plot_consistency(reports: Sequence[QualityReport], out_dir: Path) -> dict[str, Path]:
    """Mean dy action with a one-std band, per task shared by the reports."""
    tasks = sorted({task for report in reports for task in report.curves})
    paths: dict[str, Path] = {}
    for task in tasks:
        fig, ax = plt.subplots(figsize=(6, 4))
        for report in reports:
            curve = report.curves.get(task)
            if curve is None:
                continue
            t = np.linspace(0.0, 1.0, curve.mean.shape[0])
            ax.plot(t, curve.mean[:, 1], label=report.source)
            ax.fill_between(t, curve.mean[:, 1] - curve.std[:, 1], curve.mean[:, 1] + curve.std[:, 1], alpha=0.2)
        ax.set_title(f"{task}: dy action across trajectories")
        ax.set_xlabel("Normalized time")
        ax.set_ylabel("dy (normalized)")
        ax.legend()
        ax.grid(True)
        path = Path(out_dir) / f"consistency_{task}.svg"
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
        plt.close(fig)
        paths[f"consistency_{task}"] = path
    return paths
