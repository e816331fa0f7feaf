"""Task registry, environment kinematics, scripted demos and parallel rollouts."""

import numpy as np
import pytest
from scipy import stats

from diffusion_datagen.analysis.quality import count_noops
from diffusion_datagen.core.errors import ConfigurationError, ContractViolation
from diffusion_datagen.diffusion.nets import NoisePredictor
from diffusion_datagen.diffusion.policy import DiffusionPolicy
from diffusion_datagen.envs import get_task, list_tasks
from diffusion_datagen.envs.base import OBS_DIM, replay, reset
from diffusion_datagen.envs.scripted import ScriptedReplayPolicy, scripted_demo, style_for
from diffusion_datagen.envs.vector import run_episode, vector_rollout


def tiny_policy(schedule, seed=0):
    net = NoisePredictor(12, OBS_DIM, hidden_dim=16, cond_dim=8, seed=seed)
    return DiffusionPolicy(net, schedule, mode="stochastic", exploration_std_min=0.1)


def episode_key(episode):
    return (episode.seed, tuple(np.concatenate(episode.actions).round(12)), tuple(episode.rewards))


class TestRegistry:
    def test_all_tasks_registered(self):
        names = [task.name for task in list_tasks()]
        assert names == ["reach", "push", "pickplace", "longhorizon", "reach_wide", "pickplace_shifted"]

    def test_held_out_variants_share_instruction_labels(self):
        assert get_task("reach_wide").held_out
        assert get_task("reach_wide").instruction_id == get_task("reach").instruction_id
        assert get_task("pickplace_shifted").instruction_id == get_task("pickplace").instruction_id

    def test_unknown_task(self):
        with pytest.raises(ConfigurationError):
            get_task("stack")


class TestReset:
    def test_same_seed_same_observation(self):
        task = get_task("longhorizon")
        assert np.array_equal(reset(task, 42)[1], reset(task, 42)[1])

    def test_observation_layout(self):
        env, obs = reset(get_task("pickplace"), 3)
        assert obs.shape == (OBS_DIM,)
        assert np.array_equal(obs[0:2], env.state.ee)
        assert np.array_equal(obs[5:7], env.state.objects[0])
        assert obs[16] == get_task("pickplace").instruction_id

    def test_placements_within_ranges(self):
        task = get_task("push")
        for seed in range(1000):
            env, _ = reset(task, seed)
            assert task.ee_start.contains(env.state.ee)
            assert task.objects[0].contains(env.state.objects[0])
            assert task.goals[0].contains(env.state.goals[0])

    def test_placements_are_uniform(self):
        task = get_task("reach")
        low, high = task.goals[0].x
        xs = [reset(task, seed)[0].state.goals[0][0] for seed in range(1000)]
        assert stats.kstest(xs, "uniform", args=(low, high - low)).pvalue > 0.01


class TestStep:
    def test_zero_chunk_keeps_position(self, env_cfg):
        env, obs = reset(get_task("reach"), 0, env_cfg)
        steps = env.step(np.zeros((env_cfg.chunk_len, 3)))
        assert np.array_equal(steps[-1].observation[0:2], obs[0:2])
        assert all(step.reward == 0.0 for step in steps)

    def test_chunk_at_goal_succeeds(self, env_cfg):
        env, _ = reset(get_task("reach"), 0, env_cfg)
        env.state.ee = env.state.goals[0] - np.array([0.03, 0.0])
        chunk = np.zeros((env_cfg.chunk_len, 3))
        chunk[:, 0] = 0.6
        steps = env.step(chunk)
        assert len(steps) == 1
        assert steps[0].reward == 1.0 and steps[0].done and steps[0].success

    def test_acting_after_termination(self, env_cfg):
        env, _ = reset(get_task("reach"), 0, env_cfg)
        env.state.ee = env.state.goals[0].copy()
        env.step_primitive(np.zeros(3))
        with pytest.raises(ContractViolation):
            env.step_primitive(np.zeros(3))

    def test_wrong_chunk_length(self, env_cfg):
        env, _ = reset(get_task("reach"), 0, env_cfg)
        with pytest.raises(ContractViolation):
            env.step(np.zeros((env_cfg.chunk_len + 1, 3)))

    def test_push_contact_by_hand(self, env_cfg):
        env, _ = reset(get_task("push"), 0, env_cfg)
        env.state.ee = np.array([0.30, 0.50])
        env.state.objects[0] = np.array([0.37, 0.50])
        env.state.goals[0] = np.array([0.90, 0.90])
        # each step: ee advances 0.05, ends 0.02 short of the block, block moves 0.05
        for _ in range(3):
            env.step_primitive(np.array([1.0, 0.0, -1.0]))
        assert np.allclose(env.state.objects[0], [0.52, 0.50], atol=1e-12)
        assert np.allclose(env.state.ee, [0.45, 0.50], atol=1e-12)

    def test_push_away_from_block_leaves_it(self, env_cfg):
        env, _ = reset(get_task("push"), 0, env_cfg)
        env.state.ee = np.array([0.40, 0.50])
        env.state.objects[0] = np.array([0.37, 0.50])
        env.step_primitive(np.array([1.0, 0.0, -1.0]))
        assert np.array_equal(env.state.objects[0], [0.37, 0.50])

    def test_grasp_and_carry(self, env_cfg):
        env, _ = reset(get_task("pickplace"), 0, env_cfg)
        env.state.ee = env.state.objects[0] + np.array([0.01, 0.0])
        env.step_primitive(np.array([0.0, 0.0, 1.0]))
        assert env.state.held == 0
        env.step_primitive(np.array([0.0, 1.0, 1.0]))
        assert np.array_equal(env.state.objects[0], env.state.ee)
        env.step_primitive(np.array([0.0, 0.0, -1.0]))
        assert env.state.held == -1

    def test_longhorizon_stage_bonus(self, env_cfg):
        env, _ = reset(get_task("longhorizon"), 0, env_cfg)
        env.state.ee = env.state.goals[0].copy()
        env.state.objects[0] = env.state.goals[0].copy()
        step = env.step_primitive(np.zeros(3))
        assert step.reward == env_cfg.stage_bonus
        assert not step.done
        assert step.observation[15] == 0.5


class TestScriptedDemo:
    @pytest.mark.parametrize("task", ["reach", "push", "pickplace", "longhorizon", "reach_wide", "pickplace_shifted"])
    def test_demos_succeed(self, task):
        for seed in range(5):
            record = scripted_demo(get_task(task), seed, style_for(seed))
            assert record.success
            assert len(record) <= get_task(task).horizon

    @pytest.mark.parametrize("task", ["reach", "pickplace", "longhorizon"])
    def test_no_pauses_no_noops(self, task):
        for seed in range(5):
            record = scripted_demo(get_task(task), seed, style_for(seed), pause_rate=0.0, noise_scale=0.0)
            assert count_noops(record, 1e-3) == 0

    def test_noise_is_in_normalized_action_units(self, env_cfg):
        task = get_task("reach")
        clean = scripted_demo(task, 3, style_for(3), pause_rate=0.0, noise_scale=0.0).actions()
        noisy = scripted_demo(task, 3, style_for(3), pause_rate=0.0, noise_scale=0.01).actions()
        # same heading, perturbed by about 0.01 of the step limit (half a millimetre)
        deviation = np.abs(noisy[0, :2] - clean[0, :2]) * env_cfg.action_limit
        assert 0.0 < deviation.max() < 0.05 * env_cfg.action_limit

    def test_pause_count_is_binomial(self):
        p, n_demos = 0.1, 100
        task = get_task("pickplace")
        records = [scripted_demo(task, seed, style_for(seed), pause_rate=p) for seed in range(n_demos)]
        steps = sum(len(r) for r in records)
        noops = sum(count_noops(r, 1e-3) for r in records)
        expected = p * steps
        # first steps are never counted; allow one per demo at rate p
        assert abs(noops - expected) <= 3 * np.sqrt(steps * p * (1 - p)) + n_demos * p

    def test_styles_are_mirror_routes(self):
        for seed in range(10):
            env, _ = reset(get_task("reach"), seed)
            start, goal = env.state.ee, env.state.goals[0]
            mid = (start + goal) / 2
            left = env.scripted_plan("modal_left")[0].target
            right = env.scripted_plan("modal_right")[0].target
            assert left[1] > mid[1] > right[1]

    def test_replay_reproduces_demo(self):
        task = get_task("push")
        record = scripted_demo(task, 2, style_for(2))
        trace = replay(task, 2, record.actions())
        assert trace.success
        assert np.array_equal(trace.rewards, record.rewards())
        assert np.array_equal(trace.final_observation, record.final_observation)

    def test_replay_stops_at_termination(self):
        task = get_task("reach")
        record = scripted_demo(task, 0, style_for(0))
        padded = np.vstack([record.actions(), np.zeros((5, 3))])
        assert replay(task, 0, padded).n_steps == len(record)

    def test_styles_alternate(self):
        assert {style_for(0), style_for(1)} == {"modal_left", "modal_right"}

    def test_invalid_pause_rate(self):
        with pytest.raises(ContractViolation):
            scripted_demo(get_task("reach"), 0, "modal_left", pause_rate=1.0)


class TestVectorRollout:
    def test_single_env_matches_sequential(self, schedule):
        policy = tiny_policy(schedule)
        task = get_task("reach")
        batch = vector_rollout(policy, [task], 1, [7])
        single = run_episode(policy, task, 7)
        assert episode_key(batch.episodes[0]) == episode_key(single)

    def test_scheduling_invariance(self, schedule):
        policy = tiny_policy(schedule)
        task = get_task("reach")
        seeds = list(range(100, 108))
        parallel = vector_rollout(policy, [task], 8, seeds, workers=4)
        sequential = [run_episode(policy, task, seed) for seed in seeds]
        assert sorted(map(episode_key, parallel.episodes)) == sorted(map(episode_key, sequential))

    def test_env_ids_tagged(self, schedule):
        batch = vector_rollout(tiny_policy(schedule), [get_task("reach")], 3, [1, 2, 3], max_steps=8)
        for env_id, episode in enumerate(batch.episodes):
            assert all(t.env_id == env_id for t in episode.transitions)
            assert len(episode) <= 8

    def test_seed_count_must_match(self, schedule):
        with pytest.raises(ContractViolation):
            vector_rollout(tiny_policy(schedule), [get_task("reach")], 2, [1])

    def test_scripted_replay_solves_its_seeds(self):
        batch = vector_rollout(ScriptedReplayPolicy(), [get_task("pickplace")], 4, [0, 1, 2, 3])
        assert batch.success_rate == 1.0
        assert all(t.trace is None for t in batch.transitions)

    def test_stochastic_traces_recorded(self, schedule):
        batch = vector_rollout(tiny_policy(schedule), [get_task("reach")], 1, [5], max_steps=4)
        trace = batch.transitions[0].trace
        assert len(trace) == schedule.n_sampler_steps
        assert float(trace.var.min()) >= 0.1**2 - 1e-15
