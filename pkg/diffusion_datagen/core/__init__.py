"""Configuration, errors, seeds, checkpoints and run manifests."""

from .checkpoint import atomic_write_bytes, file_sha256, load_checkpoint, save_checkpoint
from .config import (
    BCConfig,
    DemoConfig,
    EnvConfig,
    GenerateConfig,
    HoldoutConfig,
    ModelConfig,
    PPOConfig,
    QualityConfig,
    RunConfig,
    RuntimeConfig,
    ScheduleConfig,
    StudentConfig,
    load_config,
)
from .errors import (
    CheckpointError,
    ConfigurationError,
    ContractViolation,
    DataError,
    DatagenError,
    GenerationBudgetError,
    TaskUnsolvableError,
    TrainingError,
)
from .manifest import FileRef, RunManifest, assert_parity, diff_manifests, read_manifest, write_manifest
from .seeds import SEED_BLOCKS, check_disjoint, expand_spans, seed_block, seed_spans

__all__ = [
    "RunConfig",
    "ScheduleConfig",
    "ModelConfig",
    "EnvConfig",
    "DemoConfig",
    "BCConfig",
    "PPOConfig",
    "GenerateConfig",
    "QualityConfig",
    "StudentConfig",
    "HoldoutConfig",
    "RuntimeConfig",
    "load_config",
    "DatagenError",
    "ContractViolation",
    "ConfigurationError",
    "DataError",
    "CheckpointError",
    "TrainingError",
    "TaskUnsolvableError",
    "GenerationBudgetError",
    "FileRef",
    "RunManifest",
    "write_manifest",
    "read_manifest",
    "diff_manifests",
    "assert_parity",
    "SEED_BLOCKS",
    "seed_block",
    "check_disjoint",
    "seed_spans",
    "expand_spans",
    "atomic_write_bytes",
    "file_sha256",
    "save_checkpoint",
    "load_checkpoint",
]
