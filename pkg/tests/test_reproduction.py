"""Directional results of whole-pipeline runs over five run seeds.

Each module fixture trains real policies; expect tens of minutes to hours of
CPU time. Run with ``pytest -m slow tests/test_reproduction.py``.
"""

import statistics

import pandas as pd
import pytest
import torch

from diffusion_datagen.analysis.quality import read_report_csv
from diffusion_datagen.core.config import load_config
from diffusion_datagen.core.manifest import read_manifest
from diffusion_datagen.core.seeds import seed_block
from diffusion_datagen.diffusion.nets import load_module
from diffusion_datagen.diffusion.policy import sample_chunks
from diffusion_datagen.envs import get_task
from diffusion_datagen.envs.base import reset
from diffusion_datagen.pipeline.stages import SUITE_OVERRIDES, PipelineRunner

pytestmark = pytest.mark.slow

SEEDS = range(5)
REACH = [*SUITE_OVERRIDES["quick"], "holdout.train_tasks=[reach]", "holdout.holdout_tasks=[reach_wide]"]
LONGHORIZON = ["demos.tasks=[longhorizon]"]


def pipeline(seed, root, *overrides):
    return PipelineRunner(load_config(overrides=[*overrides, f"runtime.seed={seed}"]), root)


def final_success(root, stage, task):
    return read_manifest(root / stage).extra[f"final_success.{task}"]


def median(values):
    return statistics.median(list(values))


@pytest.fixture(scope="module")
def reach_runs(tmp_path_factory):
    """Every stage on reach, plus a constant low learning-rate arm from the same warm start."""
    roots = []
    for seed in SEEDS:
        root = tmp_path_factory.mktemp(f"reach{seed}")
        runner = pipeline(seed, root, *REACH)
        tasks = ["reach"]
        demos = runner.demo_gen(tasks, root / "demos")
        bc = runner.train_bc(demos, tasks, root / "bc")
        rl = runner.train_rl([bc["diffusion_reach"]], tasks, root / "rl")
        gauss = runner.train_rl_gaussian([bc["gaussian_reach"]], tasks, root / "rl_gaussian", allow_weak_start=True)
        rl_data = runner.generate([rl["policy_reach"]], tasks, out=root / "generate" / "diffusion_rl.jsonl")
        gauss_data = runner.generate(
            [gauss["policy_reach"]], tasks, out=root / "generate_gaussian" / "gaussian_rl.jsonl"
        )
        runner.analyze([demos, rl_data, gauss_data], root / "analyze")
        runner.distill([demos, rl_data, gauss_data], tasks, root / "distill")
        runner.holdout(demos, rl_data, root / "holdout")

        constant = pipeline(seed, root, *REACH, "ppo.lr_schedule=constant", "ppo.lr_max=0.00003")
        constant.train_rl([bc["diffusion_reach"]], tasks, root / "rl_constant")
        roots.append(root)
    return roots


@pytest.fixture(scope="module")
def longhorizon_runs(tmp_path_factory):
    """Default budgets on longhorizon, with and without the minibatch diversity constraint."""
    roots = []
    for seed in SEEDS:
        root = tmp_path_factory.mktemp(f"longhorizon{seed}")
        runner = pipeline(seed, root, *LONGHORIZON)
        tasks = ["longhorizon"]
        demos = runner.demo_gen(tasks, root / "demos")
        bc = runner.train_bc(demos, tasks, root / "bc")
        runner.train_rl([bc["diffusion_longhorizon"]], tasks, root / "rl")
        single = pipeline(seed, root, *LONGHORIZON, "ppo.min_distinct_envs=1")
        single.train_rl([bc["diffusion_longhorizon"]], tasks, root / "rl_single_env")
        roots.append(root)
    return roots


class TestRLConvergence:
    def test_reach(self, reach_runs):
        assert median(final_success(root, "rl", "reach") for root in reach_runs) >= 0.9

    def test_longhorizon(self, longhorizon_runs):
        assert median(final_success(root, "rl", "longhorizon") for root in longhorizon_runs) >= 0.6

    def test_cosine_schedule_beats_constant_low_rate(self, reach_runs):
        cosine = median(final_success(root, "rl", "reach") for root in reach_runs)
        constant = median(final_success(root, "rl_constant", "reach") for root in reach_runs)
        assert cosine >= constant

    def test_diverse_minibatches_on_longhorizon(self, longhorizon_runs):
        diverse = median(final_success(root, "rl", "longhorizon") for root in longhorizon_runs)
        single = median(final_success(root, "rl_single_env", "longhorizon") for root in longhorizon_runs)
        assert diverse >= single

    def test_gaussian_baseline_reaches(self, reach_runs):
        assert median(final_success(root, "rl_gaussian", "reach") for root in reach_runs) >= 0.8


class TestQualityOrdering:
    @pytest.fixture(scope="class")
    def reports(self, reach_runs):
        return [read_report_csv(root / "analyze" / "quality_summary.csv") for root in reach_runs]

    def metric(self, reports, source, name):
        return median(report[source][name] for report in reports)

    def test_noops_only_in_scripted_demos(self, reports):
        for report in reports:
            assert report["scripted_human"]["no_op_total"] > 0
            assert report["diffusion_rl"]["no_op_total"] == 0
            assert report["gaussian_rl"]["no_op_total"] == 0

    def test_jerk(self, reports):
        diffusion = self.metric(reports, "diffusion_rl", "mean_squared_jerk")
        scripted = self.metric(reports, "scripted_human", "mean_squared_jerk")
        gaussian = self.metric(reports, "gaussian_rl", "mean_squared_jerk")
        assert diffusion < scripted < gaussian

    def test_consistency(self, reports):
        for name in ("mean_curve_std", "mean_y_std"):
            assert self.metric(reports, "diffusion_rl", name) < self.metric(reports, "scripted_human", name)

    def test_length(self, reports):
        diffusion = self.metric(reports, "diffusion_rl", "mean_traj_length")
        assert diffusion <= self.metric(reports, "scripted_human", "mean_traj_length")


class TestStudents:
    @pytest.fixture(scope="class")
    def tables(self, reach_runs):
        return [pd.read_csv(root / "distill" / "distill_comparison.csv").set_index("source") for root in reach_runs]

    def test_data_source_ordering(self, tables):
        scores = {source: median(t.loc[source, "mean"] for t in tables) for source in tables[0].index}
        assert scores["diffusion_rl"] >= scores["scripted_human"] >= scores["gaussian_rl"]

    def test_single_task_student_on_rl_data(self, tables):
        assert median(t.loc["diffusion_rl", "reach"] for t in tables) >= 0.9

    def test_mixed_data_on_held_out_tasks(self, reach_runs):
        tables = [pd.read_csv(root / "holdout" / "holdout_comparison.csv").set_index("source") for root in reach_runs]
        mixed = median(t.loc["mixed", "mean"] for t in tables)
        for source in ("human", "diffusion_rl"):
            assert mixed >= median(t.loc[source, "mean"] for t in tables)

    def test_students_share_hyperparameters(self, reach_runs):
        for root in reach_runs:
            configs = [read_manifest(root / "distill" / label).config for label in ("scripted_human", "diffusion_rl")]
            assert configs[0] == configs[1]


@pytest.mark.parametrize("seed", SEEDS)
def test_bc_keeps_both_reach_routes(tmp_path, seed):
    """Sampled first chunks at a fresh reach state split by heading; the Gaussian mean falls between."""
    runner = pipeline(seed, tmp_path, "demos.tasks=[reach]")
    demos = runner.demo_gen(["reach"], tmp_path / "demos")
    bc = runner.train_bc(demos, ["reach"], tmp_path / "bc")
    net, _ = load_module(bc["diffusion_reach"], "noise_predictor")
    head, _ = load_module(bc["gaussian_reach"], "gaussian")

    _, obs = reset(get_task("reach"), seed_block("eval", seed, 1)[0])
    obs = torch.as_tensor(obs).unsqueeze(0)
    chunk_len = runner.config.env.chunk_len
    a0, _ = sample_chunks(net, runner.schedule, obs.repeat(1000, 1), torch.Generator().manual_seed(seed))
    heading = a0.reshape(1000, chunk_len, 3)[:, :, 1].sum(dim=1)
    up, down = heading[heading > 0], heading[heading < 0]
    assert len(up) >= 200 and len(down) >= 200

    with torch.no_grad():
        head_heading = float(head(obs)[0].reshape(chunk_len, 3)[:, 1].sum())
    assert float(down.mean()) < head_heading < float(up.mean())
