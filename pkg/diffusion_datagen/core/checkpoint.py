"""Versioned binary parameter container.

Layout (little endian)::

    magic "DDRLCKPT" | u32 format version | u32 metadata length | metadata JSON
    u32 tensor count | per tensor: u16 name length, name, u8 ndim, u64 dims,
    row-major float64 payload

Identical bytes load into identical parameters.
"""

import hashlib
import json
import os
import struct
import tempfile
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"DDRLCKPT"
FORMAT_VERSION = 1


def file_sha256(path: Path) -> str:
    """Hex SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write ``payload`` through a temp file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def encode_checkpoint(tensors: Mapping[str, torch.Tensor], metadata: Mapping[str, Any]) -> bytes:
    meta = json.dumps(dict(metadata), sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta]
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        array = np.ascontiguousarray(
            tensors[name].detach().cpu().to(torch.float64).numpy(), dtype="<f8"
        )
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(array.tobytes(order="C"))
    return b"".join(parts)


def save_checkpoint(
    path: Path, tensors: Mapping[str, torch.Tensor], metadata: Mapping[str, Any]
) -> str:
    """Write a checkpoint and return its SHA-256."""
    payload = encode_checkpoint(tensors, metadata)
    atomic_write_bytes(Path(path), payload)
    return hashlib.sha256(payload).hexdigest()


def load_checkpoint(path: Path) -> tuple[dict[str, torch.Tensor], dict[str, Any]]:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns:
        (float64 tensors by name, metadata)
    """
    path = Path(path)
    try:
        payload = path.read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"Checkpoint not found: {path}") from exc
    if not payload.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    try:
        offset = len(MAGIC)
        version, meta_len = struct.unpack_from("<II", payload, offset)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        offset += 8
        metadata = json.loads(payload[offset : offset + meta_len].decode())
        offset += meta_len
        (count,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        tensors: dict[str, torch.Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset : offset + name_len].decode()
            offset += name_len
            (ndim,) = struct.unpack_from("<B", payload, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}Q", payload, offset)
            offset += 8 * ndim
            n_bytes = 8 * int(np.prod(shape, dtype=np.int64))
            if offset + n_bytes > len(payload):
                raise CheckpointError(f"{path}: truncated tensor '{name}'")
            array = np.frombuffer(payload, dtype="<f8", count=n_bytes // 8, offset=offset)
            tensors[name] = torch.from_numpy(array.reshape(shape).copy())
            offset += n_bytes
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint: {exc}") from exc
    if offset != len(payload):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return tensors, metadata
