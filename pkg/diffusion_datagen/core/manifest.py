"""Run manifests: the resolved config, seeds and file hashes of one stage run."""

import logging
from collections.abc import Iterable, Mapping
from datetime import datetime
from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel

from .. import __version__
from .checkpoint import atomic_write_bytes, file_sha256
from .errors import ConfigurationError, DataError

logger = logging.getLogger("diffusion_datagen.manifest")

MANIFEST_NAME = "manifest.yaml"
VOLATILE_KEYS = ("created_at", "git_describe", "outputs")


class FileRef(BaseModel):
    """A file consumed or produced by a stage."""
    path: str
    sha256: str


class RunManifest(BaseModel):
    """Everything needed to re-run a stage."""
    stage: str
    seed: int
    config: dict[str, Any]
    inputs: dict[str, FileRef] = {}
    outputs: dict[str, FileRef] = {}
    extra: dict[str, Any] = {}
    package_version: str = __version__
    git_describe: str = "unknown"
    created_at: str = ""


def git_describe(start: Path | None = None) -> str:
    """``git describe --always --dirty`` of the enclosing repository, or ``unknown``."""
    try:
        import git
    except ImportError:
        return "unknown"
    try:
        repo = git.Repo(start or Path.cwd(), search_parent_directories=True)
        return str(repo.git.describe("--always", "--dirty", "--tags"))
    except (git.InvalidGitRepositoryError, git.NoSuchPathError, git.GitCommandError, ValueError):
        return "unknown"


def file_ref(path: Path) -> FileRef:
    """Hash a file that must exist."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Required file not found: {path}")
    return FileRef(path=str(path), sha256=file_sha256(path))


def file_refs(paths: Mapping[str, Path | Iterable[Path]]) -> dict[str, FileRef]:
    """Hash named files; iterables get ``name[i]`` keys."""
    refs: dict[str, FileRef] = {}
    for role, value in paths.items():
        if isinstance(value, str | Path):
            refs[role] = file_ref(Path(value))
        else:
            for index, item in enumerate(value):
                refs[f"{role}[{index}]"] = file_ref(Path(item))
    return refs


def write_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    """Write ``manifest.yaml`` beside the stage outputs."""
    if not manifest.created_at:
        manifest = manifest.model_copy(update={"created_at": datetime.now().isoformat()})
    if manifest.git_describe == "unknown":
        manifest = manifest.model_copy(update={"git_describe": git_describe(Path(out_dir))})
    path = Path(out_dir) / MANIFEST_NAME
    text = yaml.safe_dump(manifest.model_dump(mode="json"), sort_keys=True)
    atomic_write_bytes(path, text.encode())
    logger.info(f"Wrote manifest for stage '{manifest.stage}' to {path}")
    return path


def read_manifest(path: Path) -> RunManifest:
    """Load a manifest file (or the manifest inside a stage directory)."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError as exc:
        raise DataError(f"Manifest not found: {path}") from exc
    return RunManifest.model_validate(data)


def _flatten(value: Any, prefix: str = "") -> dict[str, Any]:
    if isinstance(value, Mapping):
        flat: dict[str, Any] = {}
        for key, item in value.items():
            flat.update(_flatten(item, f"{prefix}.{key}" if prefix else str(key)))
        return flat
    return {prefix: value}


def diff_manifests(
    first: RunManifest, second: RunManifest, ignore: Iterable[str] = VOLATILE_KEYS
) -> list[str]:
    """Dotted keys whose values differ between two manifests."""
    skipped = tuple(ignore)
    left = _flatten(first.model_dump(mode="json"))
    right = _flatten(second.model_dump(mode="json"))
    keys = sorted(set(left) | set(right))
    return [
        key
        for key in keys
        if not key.startswith(skipped) and left.get(key) != right.get(key)
    ]


def assert_parity(manifests: list[RunManifest], allowed_prefix: str = "inputs.dataset") -> None:
    """Require that manifests differ only in the dataset they trained on."""
    for other in manifests[1:]:
        extra = [
            key
            for key in diff_manifests(manifests[0], other)
            if not key.startswith(allowed_prefix) and not key.startswith("extra.")
        ]
        if extra:
            raise ConfigurationError(
                "Hyperparameter parity violated; manifests differ in: " + ", ".join(extra)
            )
