"""Behaviour cloning, PPO fine-tuning and student distillation."""

from .bc import DemoDataset, bc_loss, check_warm_start, train_bc
from .distill import evaluate, holdout_study, train_student
from .rl import compute_gae, ppo_loss, train_rl, train_rl_gaussian, value_loss

__all__ = [
    "DemoDataset",
    "bc_loss",
    "train_bc",
    "check_warm_start",
    "compute_gae",
    "value_loss",
    "ppo_loss",
    "train_rl",
    "train_rl_gaussian",
    "train_student",
    "evaluate",
    "holdout_study",
]
