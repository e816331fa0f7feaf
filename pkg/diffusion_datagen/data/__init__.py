"""Trajectory records, dataset files and dataset generation."""

from .datagen import generate_dataset
from .dataset import (
    Dataset,
    TrajectoryRecord,
    mix_datasets,
    read_dataset,
    verify_replay,
    write_dataset,
)

__all__ = [
    "Dataset",
    "TrajectoryRecord",
    "read_dataset",
    "write_dataset",
    "verify_replay",
    "mix_datasets",
    "generate_dataset",
]
