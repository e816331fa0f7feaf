"""Diffusion math, networks and chunk samplers."""

from .nets import GaussianHead, NoisePredictor, StudentPolicy, ValueNet, load_module, save_module
from .policy import DiffusionPolicy, GaussianPolicy, PolicyOutput, SamplingContext
from .schedule import DenoisingTrace, NoiseSchedule, make_schedule, schedule_from_config

__all__ = [
    "NoiseSchedule",
    "DenoisingTrace",
    "make_schedule",
    "schedule_from_config",
    "NoisePredictor",
    "StudentPolicy",
    "ValueNet",
    "GaussianHead",
    "save_module",
    "load_module",
    "DiffusionPolicy",
    "GaussianPolicy",
    "PolicyOutput",
    "SamplingContext",
]
