"""Shared fixtures."""

import sys
from pathlib import Path

import pytest
import torch

# Add the package to Python path
package_root = Path(__file__).parent.parent
sys.path.insert(0, str(package_root))

from diffusion_datagen.core.config import EnvConfig, RunConfig  # noqa: E402
from diffusion_datagen.diffusion.schedule import make_schedule  # noqa: E402


@pytest.fixture
def schedule():
    return make_schedule(20, 1e-4, 2e-2, 5)


@pytest.fixture
def env_cfg():
    return EnvConfig()


@pytest.fixture
def tiny_config():
    """Budgets small enough for unit tests."""
    return RunConfig.model_validate(
        {
            "model": {"hidden_dim": 16, "cond_dim": 8, "value_hidden_dim": 16},
            "demos": {"tasks": ["reach"], "n_per_task": 4},
            "bc": {"steps": 5, "batch_size": 32, "gate_episodes": 2, "warm_start_floor": 0.0},
            "ppo": {
                "iterations": 2,
                "n_envs": 2,
                "epochs": 1,
                "minibatch_size": 64,
                "min_distinct_envs": 1,
                "probe_samples": 4,
                "checkpoint_every": 1,
                "eval_episodes": 2,
            },
            "generate": {"n_per_task": 2},
            "student": {"steps": 5, "batch_size": 32, "eval_episodes": 2},
        }
    )


@pytest.fixture(autouse=True)
def _double_precision():
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)
