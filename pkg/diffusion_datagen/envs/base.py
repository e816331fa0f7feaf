"""Base classes for the 2-D toy manipulation tasks.

Observation vector layout (``OBS_DIM`` entries, identical for every family;
unused object and goal slots are zero)::

    0-1   end-effector position (m)         2-3   end-effector velocity (m/s)
    4     gripper state {0 open, 1 closed}
    5-6   object 1 position                 7     object 1 held flag
    8-9   object 2 position                 10    object 2 held flag
    11-12 goal 1 position                   13-14 goal 2 position
    15    completed stages / stage count    16    instruction label l

Primitive actions are ``(dx, dy, gripper_cmd)`` in ``[-1, 1]``; the
displacement is ``(dx, dy) * action_limit`` and ``gripper_cmd > 0`` closes.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import ClassVar, Literal

import numpy as np
from pydantic import BaseModel

from ..core.config import EnvConfig
from ..core.errors import ConfigurationError, ContractViolation

OBS_DIM = 17
ACTION_DIM = 3
MAX_OBJECTS = 2
WORKSPACE = (0.0, 1.0)

FAMILIES = ("reach", "push", "pickplace", "longhorizon")
Style = Literal["modal_left", "modal_right"]
STYLES: tuple[Style, Style] = ("modal_left", "modal_right")


class PlacementRange(BaseModel):
    """Axis-aligned box that placements are drawn from uniformly."""
    x: tuple[float, float]
    y: tuple[float, float]

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.uniform(*self.x), rng.uniform(*self.y)])

    def contains(self, point: np.ndarray) -> bool:
        return bool(self.x[0] <= point[0] <= self.x[1] and self.y[0] <= point[1] <= self.y[1])


class TaskSpec(BaseModel):
    """A named task: family, horizon and randomization ranges."""
    name: str
    family: str
    task_id: int
    description: str
    horizon: int
    ee_start: PlacementRange
    objects: list[PlacementRange] = []
    goals: list[PlacementRange] = []
    held_out: bool = False

    @property
    def instruction_id(self) -> int:
        """Label ``l`` shared by every task of a family."""
        return FAMILIES.index(self.family)


@dataclass
class EnvState:
    """Mutable simulator state of one episode."""
    ee: np.ndarray
    vel: np.ndarray
    gripper: float
    objects: np.ndarray
    goals: np.ndarray
    held: int = -1
    stage: int = 0
    t: int = 0
    done: bool = False
    success: bool = False
    rewards: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class EnvStep:
    """Result of one primitive action."""
    action: np.ndarray
    reward: float
    done: bool
    success: bool
    observation: np.ndarray


@dataclass(frozen=True)
class Waypoint:
    """One leg of a scripted plan: move to ``target`` or set the gripper."""
    kind: Literal["move", "grip"]
    target: np.ndarray | None = None
    close: bool = False


class TaskRegistry:
    """Registry of task families and the tasks they provide."""
    _families: dict[str, type[BaseTaskEnv]] = {}
    _tasks: dict[str, TaskSpec] = {}

    @classmethod
    def register(cls, env_class: type[BaseTaskEnv]) -> None:
        """Register a family and its built-in tasks."""
        cls._families[env_class.FAMILY] = env_class
        for task in env_class.TASKS:
            cls._tasks[task.name] = task

    @classmethod
    def register_task(cls, task: TaskSpec) -> None:
        if task.family not in cls._families:
            raise ConfigurationError(f"Unknown task family: {task.family}")
        cls._tasks[task.name] = task

    @classmethod
    def get_task(cls, name: str) -> TaskSpec:
        if name not in cls._tasks:
            known = ", ".join(sorted(cls._tasks))
            raise ConfigurationError(f"Unknown task '{name}' (known: {known})")
        return cls._tasks[name]

    @classmethod
    def get_tasks(cls, names: list[str]) -> list[TaskSpec]:
        return [cls.get_task(name) for name in names]

    @classmethod
    def list_tasks(cls) -> list[TaskSpec]:
        return sorted(cls._tasks.values(), key=lambda task: task.task_id)

    @classmethod
    def family_class(cls, family: str) -> type[BaseTaskEnv]:
        if family not in cls._families:
            raise ConfigurationError(f"Unknown task family: {family}")
        return cls._families[family]


class BaseTaskEnv(ABC):
    """One deterministic episode of a task family.

    Subclasses set ``FAMILY``, ``TASKS``, ``PUSHABLE``/``GRASPABLE`` and
    implement the success predicate and the scripted plan.
    """

    FAMILY: ClassVar[str]
    TASKS: ClassVar[list[TaskSpec]]
    N_STAGES: ClassVar[int] = 1
    PUSHABLE: ClassVar[bool] = False
    GRASPABLE: ClassVar[bool] = False

    def __init__(self, task: TaskSpec, cfg: EnvConfig | None = None):
        if task.family != self.FAMILY:
            raise ContractViolation(f"Task {task.name} is not a {self.FAMILY} task")
        self.task = task
        self.cfg = cfg or EnvConfig()
        self.state: EnvState | None = None

    # Episode lifecycle

    def reset(self, seed: int) -> np.ndarray:
        """Place end effector, objects and goals from ``seed`` and return the observation."""
        rng = np.random.default_rng(seed)
        ee = self.task.ee_start.sample(rng)
        objects = np.array([r.sample(rng) for r in self.task.objects]).reshape(-1, 2)
        goals = np.array([r.sample(rng) for r in self.task.goals]).reshape(-1, 2)
        self.state = EnvState(
            ee=ee, vel=np.zeros(2), gripper=0.0, objects=objects, goals=goals
        )
        return self.observation()

    def _require_state(self) -> EnvState:
        if self.state is None:
            raise ContractViolation("reset() must be called before stepping")
        return self.state

    def observation(self) -> np.ndarray:
        state = self._require_state()
        obs = np.zeros(OBS_DIM)
        obs[0:2] = state.ee
        obs[2:4] = state.vel
        obs[4] = state.gripper
        for index, position in enumerate(state.objects):
            base = 5 + 3 * index
            obs[base : base + 2] = position
            obs[base + 2] = 1.0 if state.held == index else 0.0
        for index, position in enumerate(state.goals):
            obs[11 + 2 * index : 13 + 2 * index] = position
        obs[15] = state.stage / self.N_STAGES
        obs[16] = self.task.instruction_id
        return obs

    def step_primitive(self, action: np.ndarray) -> EnvStep:
        """Apply one ``(dx, dy, gripper_cmd)`` action."""
        state = self._require_state()
        if state.done:
            raise ContractViolation("Cannot act on a terminated episode")
        action = np.clip(np.asarray(action, dtype=np.float64).reshape(ACTION_DIM), -1.0, 1.0)
        old_ee = state.ee.copy()
        new_ee = np.clip(old_ee + action[:2] * self.cfg.action_limit, *WORKSPACE)
        delta = new_ee - old_ee

        if self.PUSHABLE:
            for index in range(len(state.objects)):
                if index == state.held:
                    continue
                offset = state.objects[index] - old_ee
                touching = np.linalg.norm(new_ee - state.objects[index]) < self.cfg.push_radius
                if touching and float(delta @ offset) > 0.0:
                    state.objects[index] = np.clip(state.objects[index] + delta, *WORKSPACE)

        state.ee = new_ee
        state.vel = delta / self.cfg.dt
        if state.held >= 0:
            state.objects[state.held] = new_ee.copy()

        closing = action[2] > 0.0
        if closing and state.gripper == 0.0 and self.GRASPABLE:
            state.held = self._nearest_object(new_ee)
        elif not closing:
            state.held = -1
        state.gripper = 1.0 if closing else 0.0
        state.t += 1

        reward = 0.0
        while state.stage < self.N_STAGES - 1 and self.stage_complete(state, state.stage):
            state.stage += 1
            reward += self.cfg.stage_bonus
        if self.is_success(state):
            state.success = True
            state.stage = self.N_STAGES
            reward = 1.0
        state.done = state.success or state.t >= self.task.horizon
        state.rewards.append(reward)
        return EnvStep(
            action=action,
            reward=reward,
            done=state.done,
            success=state.success,
            observation=self.observation(),
        )

    def step(self, chunk: np.ndarray) -> list[EnvStep]:
        """Execute an ``H x 3`` chunk (or its flat form), stopping at termination."""
        actions = np.asarray(chunk, dtype=np.float64).reshape(-1, ACTION_DIM)
        if actions.shape[0] != self.cfg.chunk_len:
            raise ContractViolation(
                f"Chunk has {actions.shape[0]} actions, expected {self.cfg.chunk_len}"
            )
        steps: list[EnvStep] = []
        for action in actions:
            result = self.step_primitive(action)
            steps.append(result)
            if result.done:
                break
        return steps

    def _nearest_object(self, point: np.ndarray) -> int:
        state = self._require_state()
        if len(state.objects) == 0:
            return -1
        distances = np.linalg.norm(state.objects - point, axis=1)
        index = int(np.argmin(distances))
        return index if distances[index] < self.cfg.grasp_radius else -1

    def _near(self, a: np.ndarray, b: np.ndarray) -> bool:
        return bool(np.linalg.norm(a - b) < self.cfg.success_radius)

    # Family hooks

    @abstractmethod
    def is_success(self, state: EnvState) -> bool:
        """Task success; a pure function of ``state``."""

    def stage_complete(self, state: EnvState, stage: int) -> bool:
        return False

    @abstractmethod
    def scripted_plan(self, style: Style) -> list[Waypoint]:
        """Waypoints solving the task from the current state via ``style``'s route."""


def detour(start: np.ndarray, end: np.ndarray, style: Style, offset: float) -> np.ndarray:
    """Midpoint of ``start -> end`` pushed sideways; left is +y for rightward motion."""
    direction = end - start
    norm = float(np.linalg.norm(direction))
    normal = np.array([-direction[1], direction[0]]) / norm if norm > 0 else np.array([0.0, 1.0])
    if normal[1] < 0:
        normal = -normal
    sign = 1.0 if style == "modal_left" else -1.0
    return np.clip((start + end) / 2.0 + sign * offset * normal, 0.05, 0.95)


def make_env(task: TaskSpec, cfg: EnvConfig | None = None) -> BaseTaskEnv:
    """Instantiate the environment class of ``task``'s family."""
    return TaskRegistry.family_class(task.family)(task, cfg)


def reset(task: TaskSpec, seed: int, cfg: EnvConfig | None = None) -> tuple[BaseTaskEnv, np.ndarray]:
    """Create an environment for ``task`` and reset it; returns ``(env, observation)``."""
    env = make_env(task, cfg)
    return env, env.reset(seed)


@dataclass
class ReplayTrace:
    """What an action sequence does from a seed; stops at termination."""
    observations: list[np.ndarray]
    rewards: list[float]
    final_observation: np.ndarray
    success: bool

    @property
    def n_steps(self) -> int:
        return len(self.rewards)


def replay(
    task: TaskSpec, seed: int, actions: np.ndarray, cfg: EnvConfig | None = None
) -> ReplayTrace:
    """Re-simulate primitive actions from ``seed``."""
    env, obs = reset(task, seed, cfg)
    trace = ReplayTrace(observations=[], rewards=[], final_observation=obs, success=False)
    for action in np.asarray(actions, dtype=np.float64).reshape(-1, ACTION_DIM):
        trace.observations.append(obs)
        result = env.step_primitive(action)
        trace.rewards.append(result.reward)
        obs = result.observation
        if result.done:
            break
    trace.final_observation = obs
    trace.success = env._require_state().success
    return trace
