"""Error hierarchy shared by every pipeline stage.

Each family carries the process exit code the CLI returns for it.
"""


class DatagenError(Exception):
    """Root of all pipeline errors."""

    exit_code: int = 1


class ContractViolation(ValueError):
    """A caller broke a documented precondition (shapes, indices, episode state)."""


class ConfigurationError(DatagenError):
    """Invalid or unknown configuration."""

    exit_code = 3


class DataError(DatagenError):
    """Missing, corrupt or inconsistent input data."""

    exit_code = 4


class DatasetVersionError(DataError):
    """Dataset file was written with an unsupported format version."""


class DatasetChecksumError(DataError):
    """Dataset payload does not match its trailing checksum."""


class DatasetTruncatedError(DataError):
    """Dataset file ends before its checksum line."""


class EmptyDatasetError(DataError):
    """An operation that needs trajectories received none."""


class SeedOverlapError(DataError):
    """Evaluation seeds intersect seeds used for training or generation."""


class CheckpointError(DataError):
    """Checkpoint file is missing, corrupt or of the wrong kind."""


class TrainingError(DatagenError):
    """Optimization failed."""

    exit_code = 5


class TrainingDivergedError(TrainingError):
    """Loss stayed far above its initial value."""


class NonFiniteRatioError(TrainingError):
    """A PPO likelihood ratio was NaN or infinite."""


class WarmStartGateError(TrainingError):
    """Warm-started policy is too weak to start RL."""


class TaskUnsolvableError(DatagenError):
    """Scripted demonstrator exhausted its retry budget."""

    exit_code = 6


class GenerationBudgetError(DatagenError):
    """Expert policy could not produce enough successful trajectories."""

    exit_code = 7
