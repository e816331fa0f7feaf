"""Toy manipulation task families."""

import importlib
import inspect
import logging
from pathlib import Path

from .base import (
    ACTION_DIM,
    OBS_DIM,
    BaseTaskEnv,
    EnvStep,
    TaskRegistry,
    TaskSpec,
    make_env,
    replay,
    reset,
)

logger = logging.getLogger("diffusion_datagen.envs")

_SUPPORT_MODULES = {"base", "scripted", "vector"}


def discover_and_register_tasks() -> None:
    """Import every family module in this package and register its environment."""
    envs_dir = Path(__file__).parent

    for py_file in sorted(envs_dir.glob("*.py")):
        if py_file.name.startswith("__") or py_file.stem in _SUPPORT_MODULES:
            continue

        module = importlib.import_module(f".{py_file.stem}", package=__name__)
        for _name, obj in inspect.getmembers(module, inspect.isclass):
            if (
                issubclass(obj, BaseTaskEnv)
                and obj is not BaseTaskEnv
                and hasattr(obj, "FAMILY")
                and obj.__module__ == module.__name__
            ):
                TaskRegistry.register(obj)
                logger.debug(f"Registered task family {obj.FAMILY} from {py_file.name}")


discover_and_register_tasks()


def list_tasks() -> list[TaskSpec]:
    """All registered tasks ordered by task id."""
    return TaskRegistry.list_tasks()


def get_task(name: str) -> TaskSpec:
    return TaskRegistry.get_task(name)


__all__ = [
    "OBS_DIM",
    "ACTION_DIM",
    "BaseTaskEnv",
    "EnvStep",
    "TaskSpec",
    "TaskRegistry",
    "make_env",
    "replay",
    "reset",
    "list_tasks",
    "get_task",
]
