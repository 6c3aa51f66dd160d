"""Sparse-view subsampling and per-detector linear interpolation in view angle."""

from __future__ import annotations

import math

import numpy as np

from ..diffcore import ops
from .geometry import Sinogram


def sparse_indices(views: int, stride: int, count: int) -> np.ndarray:
    if stride < 1 or count < 1:
        raise ValueError("stride and count must be positive")
    if stride * (count - 1) >= views:
        raise ValueError(f"{count} views at stride {stride} need more than the {views} available")
    return np.arange(count) * stride


def sample_sparse(sino: Sinogram, stride: int, count: int) -> Sinogram:
    """Keep views 0, stride, ..., (count - 1) * stride."""
    idx = sparse_indices(sino.views, stride, count)
    data = ops.getitem(sino.data, (slice(None), slice(None), idx))
    return Sinogram(data, sino.view_angles[idx], sino.geometry)


def interpolation_matrix(known: np.ndarray, targets: np.ndarray, period: float | None) -> np.ndarray:
    """Row-stochastic (targets x known) matrix of linear-interpolation weights.

    With ``period`` set, angles wrap around so targets between the last and
    the first known angle are interpolated across the seam.
    """
    known = np.asarray(known, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if known.size == 0:
        raise ValueError("no known views to interpolate from")
    w = np.zeros((targets.size, known.size))
    if known.size == 1:
        w[:, 0] = 1.0
        return w
    if period is not None:
        ext = np.concatenate([known[-1:] - period, known, known[:1] + period])
        ext_idx = np.concatenate([[known.size - 1], np.arange(known.size), [0]])
        t = np.mod(targets - known[0], period) + known[0]
    else:
        lo, hi = known[0] - 1e-12, known[-1] + 1e-12
        if np.any(targets < lo) or np.any(targets > hi):
            raise ValueError("target angle outside the span of the sparse views")
        ext, ext_idx, t = known, np.arange(known.size), np.clip(targets, known[0], known[-1])
    k = np.clip(np.searchsorted(ext, t, side="right") - 1, 0, ext.size - 2)
    span = ext[k + 1] - ext[k]
    frac = (t - ext[k]) / span
    rows = np.arange(targets.size)
    np.add.at(w, (rows, ext_idx[k]), 1.0 - frac)
    np.add.at(w, (rows, ext_idx[k + 1]), frac)
    return w


def interp_views(sparse: Sinogram, target_angles) -> Sinogram:
    """Linearly interpolate every detector channel onto ``target_angles``."""
    if sparse.views == 0:
        raise ValueError("empty sparse sinogram")
    geom = sparse.geometry
    targets = geom.validate_angles(target_angles)
    full_circle = abs(geom.angular_range - 2.0 * math.pi) < 1e-9
    w = interpolation_matrix(sparse.view_angles, targets, 2.0 * math.pi if full_circle else None)
    out_shape = sparse.data.shape[:2] + (targets.size, geom.n_detectors)
    w_single = w.astype(np.float32)

    def pick(arr):
        return w_single if arr.dtype == np.float32 else w

    data = ops.linear_map(sparse.data, lambda s: pick(s) @ s, lambda g: pick(g).T @ g, out_shape)
    return Sinogram(data, targets, geom)
