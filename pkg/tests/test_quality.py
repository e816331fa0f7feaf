"""Quality metrics on hand-built trajectories."""

import math

import numpy as np
import pytest

from diffusion_datagen.core.config import QualityConfig
from diffusion_datagen.core.errors import ContractViolation, EmptyDatasetError
from diffusion_datagen.data.dataset import Dataset, make_record
from diffusion_datagen.envs import get_task
from diffusion_datagen.analysis.quality import (
    build_report,
    consistency_curve,
    count_noops,
    emit_report,
    mean_squared_jerk,
    read_report_csv,
    resample,
    squared_jerk,
)


def path_record(ee_path, actions=None, task="reach", source="scripted_human", seed=0):
    """A record whose end effector visits ``ee_path`` (T + 1 points)."""
    ee_path = np.asarray(ee_path, dtype=np.float64)
    n = len(ee_path) - 1
    obs = np.zeros((n + 1, 17))
    obs[:, 0:2] = ee_path
    if actions is None:
        actions = np.zeros((n, 3))
        actions[:, 0:2] = np.diff(ee_path, axis=0) / 0.05
    return make_record(get_task(task), seed, obs[:-1], actions, [0.0] * n, obs[-1], True, source)


def line(n, start=(0.1, 0.5), step=(0.05, 0.0)):
    return np.asarray(start) + np.outer(np.arange(n), step)


class TestNoOps:
    def test_still_trajectory(self):
        record = path_record(np.full((9, 2), 0.4))
        assert count_noops(record, 1e-3) == 7

    def test_moving_trajectory(self):
        assert count_noops(path_record(line(10)), 1e-3) == 0

    def test_gripper_change_is_not_a_noop(self):
        actions = np.zeros((4, 3))
        actions[2, 2] = 1.0
        record = path_record(np.full((5, 2), 0.4), actions)
        # steps 2 and 3 toggle the gripper
        assert count_noops(record, 1e-3) == 1

    def test_first_step_never_counted(self):
        assert count_noops(path_record(np.full((2, 2), 0.4)), 1e-3) == 0

    def test_invalid_eps(self):
        with pytest.raises(ContractViolation):
            count_noops(path_record(line(3)), 0.0)


class TestJerk:
    def test_constant_velocity(self):
        assert mean_squared_jerk(path_record(line(12)), 0.1) < 1e-18

    def test_parabola(self):
        t = 0.1 * np.arange(10)
        positions = np.stack([0.2 + 0.3 * t**2, np.full_like(t, 0.5)], axis=1)
        assert squared_jerk(positions, 0.1).max() < 1e-16

    def test_cubic(self):
        t = 0.1 * np.arange(8)
        values = squared_jerk(t**3, 0.1)
        assert np.allclose(values, 36.0, rtol=1e-6)

    @pytest.mark.parametrize("scale", [0.5, 2.0, 3.0])
    def test_scales_quadratically(self, scale):
        rng = np.random.default_rng(0)
        positions = np.cumsum(rng.normal(size=(12, 2)) * 0.01, axis=0)
        base = squared_jerk(positions, 0.1).mean()
        assert math.isclose(squared_jerk(scale * positions, 0.1).mean(), scale**2 * base, rel_tol=1e-9)

    def test_undefined_below_four_points(self):
        assert mean_squared_jerk(path_record(line(3)), 0.1) is None


class TestConsistency:
    def test_identical_trajectories(self):
        records = [path_record(line(10), seed=s) for s in range(3)]
        curve = consistency_curve(records, 20)
        assert curve.mean.shape == (20, 3)
        assert np.allclose(curve.std, 0.0)

    def test_mirrored_routes(self):
        up = path_record(line(9, step=(0.05, 0.02)))
        down = path_record(line(9, step=(0.05, -0.02)))
        curve = consistency_curve([up, down], 10)
        assert np.allclose(curve.mean[:, 1], 0.0, atol=1e-12)
        assert np.allclose(curve.std[:, 1], 0.4)

    def test_resample_keeps_endpoints(self):
        actions = np.random.default_rng(1).normal(size=(7, 3))
        out = resample(actions, 50)
        assert np.allclose(out[0], actions[0]) and np.allclose(out[-1], actions[-1])

    def test_needs_two_records_of_one_task(self):
        with pytest.raises(ContractViolation):
            consistency_curve([path_record(line(5))], 10)
        with pytest.raises(ContractViolation):
            consistency_curve([path_record(line(5)), path_record(line(5), task="push")], 10)


class TestReport:
    def test_summary_round_trips_through_csv(self, tmp_path):
        dataset = Dataset.from_records([path_record(line(8 + s), seed=s) for s in range(3)], "scripted_human")
        report = build_report(dataset)
        paths = emit_report([report], tmp_path, charts=False)
        assert read_report_csv(paths["summary"]) == {"scripted_human": report.summary()}
        assert paths["curves"].exists()

    def test_undefined_metrics_omitted(self):
        dataset = Dataset.from_records([path_record(line(3))], "scripted_human")
        summary = build_report(dataset, QualityConfig()).summary()
        assert "mean_squared_jerk" not in summary
        assert "mean_curve_std" not in summary
        assert summary["n_trajectories"] == 1.0

    def test_charts_written(self, tmp_path):
        dataset = Dataset.from_records([path_record(line(8), seed=s) for s in range(2)], "scripted_human")
        paths = emit_report([build_report(dataset)], tmp_path)
        assert paths["summary_chart"].exists()
        assert paths["consistency_reach"].exists()

    def test_empty_dataset(self):
        dataset = Dataset.from_records([], "diffusion_rl")
        with pytest.raises(EmptyDatasetError):
            build_report(dataset)
