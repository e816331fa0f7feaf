"""Reach: move the end effector onto a goal (spatial family)."""

from .base import BaseTaskEnv, EnvState, PlacementRange, Style, TaskSpec, Waypoint, detour

START = PlacementRange(x=(0.1, 0.2), y=(0.45, 0.55))


class ReachEnv(BaseTaskEnv):
    FAMILY = "reach"
    TASKS = [
        TaskSpec(
            name="reach",
            family="reach",
            task_id=0,
            description="end effector within success radius of the goal",
            horizon=60,
            ee_start=START,
            goals=[PlacementRange(x=(0.75, 0.9), y=(0.4, 0.6))],
        ),
        TaskSpec(
            name="reach_wide",
            family="reach",
            task_id=4,
            description="reach with a wider goal region",
            horizon=60,
            ee_start=START,
            goals=[PlacementRange(x=(0.6, 0.9), y=(0.2, 0.8))],
            held_out=True,
        ),
    ]

    def is_success(self, state: EnvState) -> bool:
        return self._near(state.ee, state.goals[0])

    def scripted_plan(self, style: Style) -> list[Waypoint]:
        state = self._require_state()
        goal = state.goals[0]
        return [
            Waypoint("move", detour(state.ee, goal, style, offset=0.2)),
            Waypoint("move", goal.copy()),
        ]
