"""Long horizon: two pick-and-places in a fixed order."""

from .base import BaseTaskEnv, EnvState, PlacementRange, Style, TaskSpec, Waypoint, detour


class LongHorizonEnv(BaseTaskEnv):
    FAMILY = "longhorizon"
    GRASPABLE = True
    N_STAGES = 2
    TASKS = [
        TaskSpec(
            name="longhorizon",
            family="longhorizon",
            task_id=3,
            description="object 1 on goal 1, then object 2 on goal 2, both released",
            horizon=200,
            ee_start=PlacementRange(x=(0.1, 0.2), y=(0.45, 0.55)),
            objects=[
                PlacementRange(x=(0.3, 0.45), y=(0.6, 0.8)),
                PlacementRange(x=(0.3, 0.45), y=(0.2, 0.4)),
            ],
            goals=[
                PlacementRange(x=(0.7, 0.85), y=(0.6, 0.8)),
                PlacementRange(x=(0.7, 0.85), y=(0.2, 0.4)),
            ],
        ),
    ]

    def _placed(self, state: EnvState, index: int) -> bool:
        return state.held != index and self._near(state.objects[index], state.goals[index])

    def stage_complete(self, state: EnvState, stage: int) -> bool:
        return self._placed(state, stage)

    def is_success(self, state: EnvState) -> bool:
        return state.stage >= 1 and self._placed(state, 0) and self._placed(state, 1)

    def scripted_plan(self, style: Style) -> list[Waypoint]:
        state = self._require_state()
        plan: list[Waypoint] = []
        for index in range(2):
            obj, goal = state.objects[index], state.goals[index]
            plan += [
                Waypoint("move", obj.copy()),
                Waypoint("grip", close=True),
            ]
            if index == 0:
                plan.append(Waypoint("move", detour(obj, goal, style, offset=0.1)))
            plan += [
                Waypoint("move", goal.copy()),
                Waypoint("grip", close=False),
            ]
        return plan
