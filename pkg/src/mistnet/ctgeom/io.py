"""Binary container for images and sinograms (layout in docs/formats.md)."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geometry import FanBeamGeometry, ImageGrid, Sinogram

MAGIC = b"MISTARR\x00"
VERSION = 1
KIND_IMAGE = 1
KIND_SINOGRAM = 2
_HEADER = struct.Struct("<8sII")
_DIMS = struct.Struct("<II")


class FormatError(ValueError):
    pass


def _write(path, kind: int, array: np.ndarray, angles: np.ndarray | None) -> None:
    rows, cols = array.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, kind))
        fh.write(_DIMS.pack(rows, cols))
        fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
        if angles is not None:
            fh.write(np.ascontiguousarray(angles, dtype="<f4").tobytes())


def save_image(image: ImageGrid, path) -> None:
    _write(path, KIND_IMAGE, image.array, None)


def save_sinogram(sino: Sinogram, path) -> None:
    _write(path, KIND_SINOGRAM, sino.array, sino.view_angles)


def read_array(path) -> tuple[int, np.ndarray, np.ndarray | None]:
    """Return (kind, float32 payload, angles or None)."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size + _DIMS.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, kind = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if kind not in (KIND_IMAGE, KIND_SINOGRAM):
        raise FormatError(f"{path}: unknown kind {kind}")
    rows, cols = _DIMS.unpack_from(blob, _HEADER.size)
    offset = _HEADER.size + _DIMS.size
    n = rows * cols
    expected = offset + 4 * n + (4 * rows if kind == KIND_SINOGRAM else 0)
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(rows, cols)
    angles = None
    if kind == KIND_SINOGRAM:
        angles = np.frombuffer(blob, dtype="<f4", count=rows, offset=offset + 4 * n)
    return kind, data.copy(), None if angles is None else angles.copy()


def load_image(path, geometry: FanBeamGeometry | None = None) -> ImageGrid:
    kind, data, _ = read_array(path)
    if kind != KIND_IMAGE:
        raise FormatError(f"{path}: not an image file")
    geometry = geometry or FanBeamGeometry(image_size=data.shape[0])
    return ImageGrid(data.astype(np.float64), geometry)


def load_sinogram(path, geometry: FanBeamGeometry | None = None, angles=None) -> Sinogram:
    """Load a sinogram; ``angles`` overrides the stored float32 angles when given."""
    kind, data, stored = read_array(path)
    if kind != KIND_SINOGRAM:
        raise FormatError(f"{path}: not a sinogram file")
    geometry = geometry or FanBeamGeometry(n_detectors=data.shape[1])
    angles = stored.astype(np.float64) if angles is None else np.asarray(angles, dtype=np.float64)
    return Sinogram(data.astype(np.float64), angles, geometry)
