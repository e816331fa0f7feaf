"""Typed configuration for every pipeline stage.

All defaults are mirrored in ``configs/default.yaml``; a test keeps the two in
sync. Unknown keys are rejected so typos never fall back to defaults.
"""

from __future__ import annotations

import copy
from collections.abc import Iterable, Mapping
from importlib import resources
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigurationError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class ScheduleConfig(_Section):
    """Noise schedule and sampler grid."""
    k_train: int = Field(20, ge=1)
    beta_start: float = Field(1e-4, gt=0.0, lt=1.0)
    beta_end: float = Field(0.35, gt=0.0, lt=1.0)
    n_sampler_steps: int = Field(5, ge=1)
    variance_floor: float = Field(1e-6, gt=0.0)

    @model_validator(mode="after")
    def _check_ranges(self) -> ScheduleConfig:
        if self.beta_start > self.beta_end:
            raise ValueError("beta_start must not exceed beta_end")
        if self.n_sampler_steps > self.k_train:
            raise ValueError("n_sampler_steps must not exceed k_train")
        return self


class ModelConfig(_Section):
    """Network sizes shared by the expert, the baseline and the student."""
    hidden_dim: int = Field(128, ge=1)
    n_hidden: int = Field(2, ge=1)
    cond_dim: int = Field(64, ge=1)
    time_embed_dim: int = Field(16, ge=2)
    final_gain: float = 0.01
    value_hidden_dim: int = Field(128, ge=1)
    value_layers: int = Field(2, ge=1)
    log_std_init: float = -1.0
    log_std_min: float = -5.0
    log_std_max: float = 0.5


class EnvConfig(_Section):
    """Toy manipulation constants (meters, seconds)."""
    chunk_len: int = Field(4, ge=1)
    action_limit: float = Field(0.05, gt=0.0)
    grasp_radius: float = Field(0.05, gt=0.0)
    success_radius: float = Field(0.05, gt=0.0)
    push_radius: float = Field(0.06, gt=0.0)
    stage_bonus: float = Field(0.25, ge=0.0, lt=1.0)
    dt: float = Field(0.1, gt=0.0)


class DemoConfig(_Section):
    """Scripted 'human' corpus."""
    tasks: list[str] = ["reach", "push", "pickplace", "longhorizon"]
    n_per_task: int = Field(50, ge=1)
    pause_rate: float = Field(0.08, ge=0.0, lt=1.0)
    # std of the action noise in normalized units; displacement noise is noise_scale * action_limit
    noise_scale: float = Field(0.01, ge=0.0)
    retry_budget: int = Field(20, ge=1)


class BCConfig(_Section):
    """Phase-1 warm start."""
    steps: int = Field(5000, ge=1)
    batch_size: int = Field(256, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    divergence_factor: float = Field(10.0, gt=1.0)
    divergence_patience: int = Field(100, ge=1)
    warm_start_floor: float = Field(0.3, ge=0.0, le=1.0)
    gate_episodes: int = Field(20, ge=1)
    log_every: int = Field(100, ge=1)


class PPOConfig(_Section):
    """Phase-2 PPO over denoising steps."""
    clip_eps: float = Field(0.2, gt=0.0, lt=1.0)
    gamma: float = Field(0.99, gt=0.0, le=1.0)
    lam: float = Field(0.95, ge=0.0, le=1.0)
    epochs: int = Field(4, ge=1)
    minibatch_size: int = Field(256, ge=1)
    n_envs: int = Field(16, ge=1)
    iterations: int = Field(200, ge=1)
    lr_schedule: Literal["cosine", "constant"] = "cosine"
    lr_max: float = Field(3e-4, gt=0.0)
    lr_min: float = Field(3e-5, ge=0.0)
    lr_period: int | None = Field(None, ge=1)
    value_lr: float = Field(1e-3, gt=0.0)
    vf_coef: float = Field(0.5, ge=0.0)
    max_grad_norm: float = Field(1.0, gt=0.0)
    min_distinct_envs: int = Field(8, ge=1)
    normalize_advantages: bool = True
    exploration_std_min: float = Field(0.1, ge=0.0)
    rollout_sampler: Literal["ddim", "ddpm"] = "ddim"
    entropy_coef: float = Field(0.0, ge=0.0)
    kl_coef: float = Field(0.0, ge=0.0)
    collapse_variance_floor: float = Field(1e-3, ge=0.0)
    collapse_drop: float = Field(0.2, gt=0.0, le=1.0)
    probe_samples: int = Field(64, ge=2)
    checkpoint_every: int = Field(50, ge=1)
    eval_episodes: int = Field(50, ge=1)
    from_scratch: bool = False


class GenerateConfig(_Section):
    """Phase-3 dataset harvesting."""
    n_per_task: int = Field(50, ge=1)
    mode: Literal["ddim_deterministic", "stochastic"] = "ddim_deterministic"
    retry_factor: int = Field(10, ge=1)
    keep_failures: bool = False


class QualityConfig(_Section):
    """Trajectory-quality metric parameters."""
    vel_eps: float = Field(1e-3, gt=0.0)
    dt: float = Field(0.1, gt=0.0)
    resolution: int = Field(100, ge=2)


class StudentConfig(_Section):
    """Distillation student; identical for every data source in a comparison."""
    steps: int = Field(5000, ge=1)
    batch_size: int = Field(256, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    instruction_dim: int = Field(16, ge=1)
    eval_episodes: int = Field(50, ge=1)
    success_only: bool = True


class HoldoutConfig(_Section):
    """Held-out-task study."""
    train_tasks: list[str] = ["reach", "push", "pickplace", "longhorizon"]
    holdout_tasks: list[str] = ["reach_wide", "pickplace_shifted"]
    mix_ratio: float = Field(1.0, gt=0.0)


class RuntimeConfig(_Section):
    """Process-level knobs."""
    seed: int = 0
    dtype: Literal["float32", "float64"] = "float64"
    workers: int = Field(1, ge=1)


class RunConfig(_Section):
    """The complete, resolved configuration of one run."""
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    env: EnvConfig = Field(default_factory=EnvConfig)
    demos: DemoConfig = Field(default_factory=DemoConfig)
    bc: BCConfig = Field(default_factory=BCConfig)
    ppo: PPOConfig = Field(default_factory=PPOConfig)
    generate: GenerateConfig = Field(default_factory=GenerateConfig)
    quality: QualityConfig = Field(default_factory=QualityConfig)
    student: StudentConfig = Field(default_factory=StudentConfig)
    holdout: HoldoutConfig = Field(default_factory=HoldoutConfig)
    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)


def default_config_text() -> str:
    """Return the checked-in default configuration file."""
    return resources.files("diffusion_datagen").joinpath("configs/default.yaml").read_text()


def _deep_merge(base: dict[str, Any], update: Mapping[str, Any]) -> dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_override(text: str) -> tuple[list[str], Any]:
    """Split ``section.key=value`` into a key path and a YAML-typed value."""
    if "=" not in text:
        raise ConfigurationError(f"Override must look like section.key=value: {text!r}")
    dotted, raw = text.split("=", 1)
    path = [part for part in dotted.strip().split(".") if part]
    if len(path) < 2:
        raise ConfigurationError(f"Override key needs a section: {dotted!r}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"Unparseable override value {raw!r}: {exc}") from exc
    return path, value


def _apply_override(tree: dict[str, Any], path: list[str], value: Any) -> None:
    node = tree
    for part in path[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigurationError(f"Override path {'.'.join(path)} crosses a scalar")
        node = child
    node[path[-1]] = value


def build_config(data: Mapping[str, Any], overrides: Iterable[str] = ()) -> RunConfig:
    """Validate a raw mapping (plus overrides) into a :class:`RunConfig`."""
    tree = _deep_merge({}, data)
    for text in overrides:
        path, value = parse_override(text)
        _apply_override(tree, path, value)
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        problems = []
        for err in exc.errors():
            location = ".".join(str(p) for p in err["loc"])
            if err["type"] == "extra_forbidden":
                problems.append(f"unknown key '{location}'")
            else:
                problems.append(f"{location}: {err['msg']}")
        raise ConfigurationError("Invalid configuration: " + "; ".join(problems)) from exc


def read_yaml(path: Path) -> dict[str, Any]:
    """Load a YAML mapping, mapping every failure to a configuration error."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"Config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"Config file {path} does not parse: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"Config file {path} must contain a mapping")
    return data


def load_config(path: Path | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    """Resolve defaults, an optional config file and ``key=value`` overrides.

    Args:
        path: YAML config file or a run manifest (its ``config`` block is used)
        overrides: ``section.key=value`` strings applied last

    Returns:
        The validated run configuration.
    """
    data = yaml.safe_load(default_config_text()) or {}
    if path is not None:
        user = read_yaml(path)
        if "config" in user and "stage" in user:
            user = user["config"]
        data = _deep_merge(data, user)
    return build_config(data, overrides)
