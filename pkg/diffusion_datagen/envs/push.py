"""Push: shove a block onto a goal by contact (object family)."""

import numpy as np

from .base import BaseTaskEnv, EnvState, PlacementRange, Style, TaskSpec, Waypoint

# End-effector standoff behind the block while pushing; must exceed push_radius.
STANDOFF = 0.08
SIDE_OFFSET = 0.15


class PushEnv(BaseTaskEnv):
    FAMILY = "push"
    PUSHABLE = True
    TASKS = [
        TaskSpec(
            name="push",
            family="push",
            task_id=1,
            description="block within success radius of the goal",
            horizon=80,
            ee_start=PlacementRange(x=(0.05, 0.15), y=(0.45, 0.55)),
            objects=[PlacementRange(x=(0.35, 0.45), y=(0.4, 0.6))],
            goals=[PlacementRange(x=(0.7, 0.8), y=(0.4, 0.6))],
        ),
    ]

    def is_success(self, state: EnvState) -> bool:
        return self._near(state.objects[0], state.goals[0])

    def scripted_plan(self, style: Style) -> list[Waypoint]:
        state = self._require_state()
        block, goal = state.objects[0], state.goals[0]
        u = (goal - block) / np.linalg.norm(goal - block)
        normal = np.array([-u[1], u[0]])
        sign = 1.0 if style == "modal_left" else -1.0
        side = np.clip(block - SIDE_OFFSET * u + sign * SIDE_OFFSET * normal, 0.05, 0.95)
        return [
            Waypoint("move", side),
            Waypoint("move", block - STANDOFF * u),
            Waypoint("move", goal - STANDOFF * u),
        ]
