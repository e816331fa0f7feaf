"""Stage orchestration and the command-line interface."""

from .stages import SUITE_OVERRIDES, PipelineRunner, resolve_workers

__all__ = ["PipelineRunner", "SUITE_OVERRIDES", "resolve_workers"]
