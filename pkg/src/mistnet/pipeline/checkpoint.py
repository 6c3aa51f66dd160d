"""Versioned binary checkpoints (layout in docs/formats.md)."""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .config import VARIANTS, ModelConfig
from .model import MistModel

MAGIC = b"MISTCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sII32sI")


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint."""


class CheckpointShapeError(CheckpointError):
    pass


def encode_state(cfg: ModelConfig, state: dict[str, np.ndarray]) -> bytes:
    cfg_blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    parts = [_HEADER.pack(MAGIC, VERSION, VARIANTS.index(cfg.variant), cfg.digest(), len(cfg_blob)),
             cfg_blob, struct.pack("<I", len(state))]
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        key = name.encode()
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(model: MistModel, path) -> None:
    """Write atomically: a partially written file never replaces a good one."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_state(model.cfg, model.state_dict()))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, self.blob, self.pos)
        self.pos += size
        return vals

    def raw(self, size: int) -> bytes:
        if self.pos + size > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos:self.pos + size]
        self.pos += size
        return out


def read_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    r = _Reader(Path(path).read_bytes(), path)
    magic, version, variant_code, digest, cfg_len = r.take(_HEADER.format)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    try:
        cfg = ModelConfig.from_dict(json.loads(r.raw(cfg_len)))
    except (ValueError, TypeError) as err:
        raise CheckpointError(f"{path}: unreadable config block ({err})") from None
    if cfg.digest() != digest or variant_code >= len(VARIANTS) or VARIANTS[variant_code] != cfg.variant:
        raise CheckpointError(f"{path}: header does not match the stored config")
    (count,) = r.take("<I")
    state = {}
    for _ in range(count):
        (klen,) = r.take("<H")
        name = r.raw(klen).decode()
        (ndim,) = r.take("<B")
        shape = r.take(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(r.raw(8 * n), dtype="<f8").reshape(shape).copy()
    if r.pos != len(r.blob):
        raise CheckpointError(f"{path}: {len(r.blob) - r.pos} trailing bytes")
    return cfg, state


def load_into(model: MistModel, state: dict[str, np.ndarray]) -> None:
    """Copy ``state`` into ``model``, naming the first parameter path that does not fit."""
    own = model.state_dict()
    for name in sorted(set(own) | set(state)):
        if name not in state:
            raise CheckpointShapeError(f"parameter {name}: missing from checkpoint "
                                       f"(model expects shape {own[name].shape})")
        if name not in own:
            raise CheckpointShapeError(f"parameter {name}: shape {state[name].shape} in checkpoint "
                                       "has no counterpart in the model")
        if own[name].shape != state[name].shape:
            raise CheckpointShapeError(f"parameter {name}: checkpoint shape {state[name].shape}, "
                                       f"model expects {own[name].shape}")
    dtype = model.parameters()[0].dtype
    model.load_state_dict(state)
    model.astype(dtype)


def load_checkpoint(path, model: MistModel | None = None) -> MistModel:
    """Rebuild the stored model, or load the parameters into ``model`` when given."""
    cfg, state = read_checkpoint(path)
    if model is None:
        model = MistModel(cfg)
    load_into(model, state)
    return model
