"""Checkpoint directories: ``manifest.json`` plus one float32 blob per tensor.

Blobs are little-endian IEEE-754 single precision in row-major order, named
``<tensor name>.f32``.  Training runs in float64; values are rounded on save.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import BlobSizeError, CheckpointError, CheckpointVersionError, MissingBlobError
from .model import INIT_SCHEME, ModelParams
from .tensor import Tensor

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOB_DTYPE = np.dtype("<f4")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def save_checkpoint(params: ModelParams, cfg, path, seed: int | None = None,
                    extra: dict | None = None) -> Path:
    """Write ``params`` under directory ``path``; ``cfg`` may be a config object or dict."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    snapshot = cfg.to_dict() if hasattr(cfg, "to_dict") else dict(cfg or {})
    tensors = params.tensors()
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "float32-le",
        "init": INIT_SCHEME,
        "seed": seed,
        "config": snapshot,
        "tensors": {name: list(t.shape) for name, t in tensors.items()},
    }
    if extra:
        manifest["extra"] = extra
    for name, t in tensors.items():
        (path / f"{name}.f32").write_bytes(t.array.astype(BLOB_DTYPE).tobytes())
    (path / MANIFEST).write_text(_dump_json(manifest), encoding="utf-8")
    return path


def read_manifest(path) -> dict:
    mf = Path(path) / MANIFEST
    if not mf.exists():
        raise CheckpointError(f"no {MANIFEST} in {path}")
    manifest = json.loads(mf.read_text(encoding="utf-8"))
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version!r} is not supported (expected {FORMAT_VERSION})"
        )
    return manifest


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    manifest = read_manifest(path)
    tensors = {}
    for name, shape in manifest["tensors"].items():
        blob = path / f"{name}.f32"
        if not blob.exists():
            raise MissingBlobError(f"tensor {name!r}: blob {blob.name} is missing")
        raw = blob.read_bytes()
        expected = math.prod(shape) * BLOB_DTYPE.itemsize
        if len(raw) != expected:
            raise BlobSizeError(f"tensor {name!r}: blob has {len(raw)} bytes, expected {expected}")
        tensors[name] = Tensor(np.frombuffer(raw, dtype=BLOB_DTYPE).astype(np.float64), shape)
    return ModelParams.from_tensors(tensors)


def save_ensemble(members: list[ModelParams], cfg, path, seed: int | None = None) -> Path:
    """Deep-ensemble checkpoint: one sub-checkpoint per member plus an index."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = []
    for j, p in enumerate(members):
        name = f"member_{j:02d}"
        save_checkpoint(p, cfg, path / name, seed=None if seed is None else seed + j)
        names.append(name)
    (path / "ensemble.json").write_text(_dump_json({"members": names}), encoding="utf-8")
    return path


def load_model_set(path) -> list[ModelParams]:
    """Single checkpoint -> one-element list; ensemble checkpoint -> all members."""
    path = Path(path)
    index = path / "ensemble.json"
    if index.exists():
        names = json.loads(index.read_text(encoding="utf-8"))["members"]
        return [load_checkpoint(path / n) for n in names]
    return [load_checkpoint(path)]
