"""Scripted waypoint demonstrator standing in for human teleoperation."""

import logging

import numpy as np

from ..core.config import DemoConfig, EnvConfig
from ..core.errors import ContractViolation, TaskUnsolvableError
from ..data.dataset import TrajectoryRecord, make_record
from ..diffusion.policy import PolicyOutput, SamplingContext
from .base import ACTION_DIM, STYLES, Style, TaskSpec, make_env

logger = logging.getLogger("diffusion_datagen.scripted")

REACHED_TOL = 0.005
OPEN, CLOSED = -1.0, 1.0


def style_for(seed: int) -> Style:
    """Alternate routes by seed so a corpus splits 50/50."""
    return STYLES[seed % 2]


def _attempt(
    task: TaskSpec,
    seed: int,
    style: Style,
    pause_rate: float,
    noise_scale: float,
    micro_seed: int,
    env_cfg: EnvConfig,
) -> TrajectoryRecord:
    env = make_env(task, env_cfg)
    obs = env.reset(seed)
    state = env.state
    assert state is not None
    plan = env.scripted_plan(style)
    rng = np.random.default_rng([seed, micro_seed])
    grip = OPEN
    cursor = 0
    observations, actions, rewards = [], [], []

    while not state.done:
        while (
            cursor < len(plan)
            and plan[cursor].kind == "move"
            and np.linalg.norm(plan[cursor].target - state.ee) < REACHED_TOL
        ):
            cursor += 1
        if cursor >= len(plan):
            break

        action = np.zeros(ACTION_DIM)
        waypoint = plan[cursor]
        if rng.random() < pause_rate:
            action[2] = grip
        elif waypoint.kind == "grip":
            grip = CLOSED if waypoint.close else OPEN
            action[2] = grip
            cursor += 1
        else:
            delta = waypoint.target - state.ee
            distance = float(np.linalg.norm(delta))
            if distance > env_cfg.action_limit:
                delta = delta * (env_cfg.action_limit / distance)
            action[:2] = delta / env_cfg.action_limit
            action[:2] += noise_scale * rng.standard_normal(2)
            action[2] = grip

        step = env.step_primitive(action)
        observations.append(obs)
        actions.append(step.action)
        rewards.append(step.reward)
        obs = step.observation

    return make_record(
        task, seed, observations, actions, rewards, obs, state.success, "scripted_human"
    )


def scripted_demo(
    task: TaskSpec,
    seed: int,
    style: Style,
    pause_rate: float = 0.08,
    noise_scale: float = 0.01,
    retry_budget: int = 20,
    env_cfg: EnvConfig | None = None,
) -> TrajectoryRecord:
    """Solve ``task`` from ``seed`` along ``style``'s route.

    Each step is a pause (zero displacement, unchanged gripper) with
    probability ``pause_rate``; otherwise the controller heads for the
    current waypoint at full speed plus Gaussian noise of ``noise_scale``
    in normalized action units, so the displacement noise is
    ``noise_scale * action_limit`` meters per step. Failed attempts are
    retried with a new noise stream.

    Raises:
        TaskUnsolvableError: no attempt succeeded within ``retry_budget``
    """
    if not 0.0 <= pause_rate < 1.0:
        raise ContractViolation(f"pause_rate must lie in [0, 1), got {pause_rate}")
    env_cfg = env_cfg or EnvConfig()
    for micro_seed in range(retry_budget):
        record = _attempt(task, seed, style, pause_rate, noise_scale, micro_seed, env_cfg)
        if record.success:
            return record
        logger.debug(f"Demo {task.name}/{seed} attempt {micro_seed} failed; retrying")
    raise TaskUnsolvableError(
        f"Scripted demonstrator failed {task.name} from seed {seed} {retry_budget} times"
    )


def demo_corpus(
    tasks: list[TaskSpec], seeds: list[int], cfg: DemoConfig, env_cfg: EnvConfig | None = None
) -> list[TrajectoryRecord]:
    """One successful demo per (task, seed), styles alternating with the seed."""
    records = []
    for task in tasks:
        for seed in seeds:
            records.append(
                scripted_demo(
                    task,
                    seed,
                    style_for(seed),
                    pause_rate=cfg.pause_rate,
                    noise_scale=cfg.noise_scale,
                    retry_budget=cfg.retry_budget,
                    env_cfg=env_cfg,
                )
            )
        logger.info(f"Collected {len(seeds)} scripted demos for {task.name}")
    return records


class ScriptedReplayPolicy:
    """Chunk sampler that replays the scripted demonstrator for the episode's seed."""

    def __init__(self, cfg: DemoConfig | None = None, env_cfg: EnvConfig | None = None):
        self.cfg = cfg or DemoConfig()
        self.env_cfg = env_cfg or EnvConfig()
        self._cache: dict[tuple[str, int], np.ndarray] = {}

    def __call__(self, obs: np.ndarray, ctx: SamplingContext) -> PolicyOutput:
        key = (ctx.task.name, ctx.seed)
        if key not in self._cache:
            record = scripted_demo(
                ctx.task,
                ctx.seed,
                style_for(ctx.seed),
                self.cfg.pause_rate,
                self.cfg.noise_scale,
                self.cfg.retry_budget,
                self.env_cfg,
            )
            self._cache[key] = record.actions()
        actions = self._cache[key]
        h = self.env_cfg.chunk_len
        chunk = np.zeros((h, ACTION_DIM))
        window = actions[ctx.decision * h : (ctx.decision + 1) * h]
        chunk[: len(window)] = window
        return PolicyOutput(chunk=chunk.reshape(-1))
