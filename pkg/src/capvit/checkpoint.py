"""Bit-exact checkpointing: a manifest plus one packed float32 weight file.

A checkpoint is a directory containing ``manifest.json`` (format version,
configs, step, and an array index of {name, shape, dtype, file,
byte_offset}) and ``weights.bin`` (little-endian float32 arrays
concatenated in manifest order, each aligned to 64 bytes).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .tensor import Tensor

FORMAT_VERSION = 1
_ALIGN = 64
WEIGHTS_FILE = "weights.bin"
MANIFEST_FILE = "manifest.json"


def _aligned(offset: int) -> int:
    return (offset + _ALIGN - 1) // _ALIGN * _ALIGN


def save_checkpoint(arrays: dict, configs: dict, step: int, path) -> Path:
    """Write arrays (Tensors or ndarrays) as float32; returns the directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index = []
    blob = bytearray()
    for name in sorted(arrays):
        arr = arrays[name]
        data = (arr.data if isinstance(arr, Tensor) else np.asarray(arr)).astype("<f4")
        offset = _aligned(len(blob))
        blob.extend(b"\0" * (offset - len(blob)))
        blob.extend(data.tobytes())
        index.append(
            {
                "name": name,
                "shape": list(data.shape),
                "dtype": "float32",
                "file": WEIGHTS_FILE,
                "byte_offset": offset,
            }
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "configs": configs,
        "step": int(step),
        "arrays": index,
    }
    (path / WEIGHTS_FILE).write_bytes(bytes(blob))
    with open(path / MANIFEST_FILE, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def load_checkpoint(path):
    """Read a checkpoint; returns (arrays dict, configs dict, step)."""
    path = Path(path)
    manifest_path = path / MANIFEST_FILE
    if not manifest_path.exists():
        raise CheckpointError(f"{path}: no {MANIFEST_FILE}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{manifest_path}: corrupt manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {manifest.get('format_version')}")
    raw = (path / WEIGHTS_FILE).read_bytes() if (path / WEIGHTS_FILE).exists() else None
    if raw is None:
        raise CheckpointError(f"{path}: no {WEIGHTS_FILE}")
    arrays = {}
    for entry in manifest["arrays"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        offset = entry["byte_offset"]
        end = offset + 4 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: array {name!r} is truncated")
        arrays[name] = (
            np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        )
    return arrays, manifest["configs"], manifest["step"]


def verify_shapes(arrays: dict, expected: dict) -> None:
    """Check each loaded array against the shape the config implies."""
    for name, shape in expected.items():
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing array {name!r}")
        if tuple(arrays[name].shape) != tuple(shape):
            raise CheckpointError(
                f"array {name!r} has shape {tuple(arrays[name].shape)}, config expects {tuple(shape)}"
            )
