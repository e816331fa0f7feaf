"""Pick-and-place: grasp an object and release it on a goal (goal family)."""

from .base import BaseTaskEnv, EnvState, PlacementRange, Style, TaskSpec, Waypoint, detour

START = PlacementRange(x=(0.1, 0.2), y=(0.45, 0.55))


class PickPlaceEnv(BaseTaskEnv):
    FAMILY = "pickplace"
    GRASPABLE = True
    TASKS = [
        TaskSpec(
            name="pickplace",
            family="pickplace",
            task_id=2,
            description="object released within success radius of the goal",
            horizon=100,
            ee_start=START,
            objects=[PlacementRange(x=(0.35, 0.5), y=(0.25, 0.75))],
            goals=[PlacementRange(x=(0.7, 0.85), y=(0.25, 0.75))],
        ),
        TaskSpec(
            name="pickplace_shifted",
            family="pickplace",
            task_id=5,
            description="pick-and-place carried right to left",
            horizon=100,
            ee_start=START,
            objects=[PlacementRange(x=(0.5, 0.6), y=(0.25, 0.75))],
            goals=[PlacementRange(x=(0.2, 0.3), y=(0.25, 0.75))],
            held_out=True,
        ),
    ]

    def is_success(self, state: EnvState) -> bool:
        return state.held == -1 and self._near(state.objects[0], state.goals[0])

    def scripted_plan(self, style: Style) -> list[Waypoint]:
        state = self._require_state()
        obj, goal = state.objects[0], state.goals[0]
        return [
            Waypoint("move", obj.copy()),
            Waypoint("grip", close=True),
            Waypoint("move", detour(obj, goal, style, offset=0.2)),
            Waypoint("move", goal.copy()),
            Waypoint("grip", close=False),
        ]
