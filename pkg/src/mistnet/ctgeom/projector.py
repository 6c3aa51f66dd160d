"""Ray-driven fan-beam projector with exact pixel intersection lengths.

The system matrix (rays x pixels) is assembled once per geometry and view
set with a vectorised Siddon traversal and kept in CSR form. Forward
projection multiplies by it and backprojection by its transpose, so the
pair is adjoint to rounding error. SciPy's CSR mat-vec is single-threaded
and accumulates each row in stored-column order, so results are
deterministic.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from ..diffcore import ops
from .geometry import FanBeamGeometry, ImageGrid, Sinogram


def ray_endpoints(geom: FanBeamGeometry, angles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Source and detector-cell positions, each (views, n_detectors, 2)."""
    beta = np.asarray(angles, dtype=np.float64)[:, None]
    gamma = geom.detector_angles()[None, :]
    src = geom.source_to_isocenter * np.stack([np.cos(beta), np.sin(beta)], axis=-1)
    src = np.broadcast_to(src, (beta.shape[0], gamma.shape[1], 2))
    direction = beta + np.pi + gamma
    det = src + geom.source_to_detector * np.stack([np.cos(direction), np.sin(direction)], axis=-1)
    return src, det


def pixel_centers(geom: FanBeamGeometry) -> tuple[np.ndarray, np.ndarray]:
    """x (per column) and y (per row) coordinates of pixel centres; row 0 is the top (+y)."""
    n, p = geom.image_size, geom.pixel_pitch
    x = (np.arange(n) - (n - 1) / 2.0) * p
    y = ((n - 1) / 2.0 - np.arange(n)) * p
    return x, y


def siddon_segments(geom: FanBeamGeometry, src: np.ndarray, det: np.ndarray):
    """Intersections of each ray (row of ``src``/``det``) with the pixel grid.

    Returns flat arrays (ray index, pixel index, length) with zero-length
    pieces removed.
    """
    n, p = geom.image_size, geom.pixel_pitch
    half = geom.fov_diameter / 2.0
    src = src.reshape(-1, 2)
    det = det.reshape(-1, 2)
    d = det - src
    planes = -half + p * np.arange(n + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ax = (planes[None, :] - src[:, :1]) / d[:, :1]
        ay = (planes[None, :] - src[:, 1:]) / d[:, 1:]
    ax = np.where(np.isfinite(ax), ax, 0.0)
    ay = np.where(np.isfinite(ay), ay, 0.0)
    n_rays = src.shape[0]
    alphas = np.concatenate([np.zeros((n_rays, 1)), ax, ay, np.ones((n_rays, 1))], axis=1)
    alphas = np.sort(np.clip(alphas, 0.0, 1.0), axis=1)
    da = np.diff(alphas, axis=1)
    mid = 0.5 * (alphas[:, 1:] + alphas[:, :-1])
    mx = src[:, :1] + mid * d[:, :1]
    my = src[:, 1:] + mid * d[:, 1:]
    col = np.floor((mx + half) / p).astype(np.int64)
    row = np.floor((half - my) / p).astype(np.int64)
    keep = (da > 0) & (col >= 0) & (col < n) & (row >= 0) & (row < n)
    ray_len = np.hypot(d[:, 0], d[:, 1])
    ray_idx = np.broadcast_to(np.arange(n_rays)[:, None], da.shape)[keep]
    pix_idx = (row * n + col)[keep]
    lengths = (da * ray_len[:, None])[keep]
    return ray_idx, pix_idx, lengths


@lru_cache(maxsize=32)
def _system_matrix_cached(geom: FanBeamGeometry, angles: tuple[float, ...]) -> sp.csr_matrix:
    src, det = ray_endpoints(geom, np.array(angles))
    rays, pix, lengths = siddon_segments(geom, src, det)
    shape = (len(angles) * geom.n_detectors, geom.image_size ** 2)
    mat = sp.coo_matrix((lengths, (rays, pix)), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def system_matrix(geom: FanBeamGeometry, angles) -> sp.csr_matrix:
    """Sparse matrix A with rows ordered view-major: row = view * n_detectors + detector."""
    angles = geom.validate_angles(angles)
    return _system_matrix_cached(geom, tuple(float(a) for a in angles))


class Projector:
    """Forward/adjoint pair for one geometry and view set, usable on raw arrays."""

    def __init__(self, geom: FanBeamGeometry, angles):
        self.geometry = geom
        self.angles = geom.validate_angles(angles)
        self.matrix = system_matrix(geom, self.angles)
        self.matrix_t = self.matrix.T.tocsr()
        self._single = None
        self.calls = 0

    def _mats(self, dtype):
        # float32 inputs get float32 copies of the matrices so the graph stays single precision
        if dtype != np.float32:
            return self.matrix, self.matrix_t
        if self._single is None:
            self._single = (self.matrix.astype(np.float32), self.matrix_t.astype(np.float32))
        return self._single

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.angles.size, self.geometry.n_detectors)

    def forward(self, image: np.ndarray) -> np.ndarray:
        self.calls += 1
        n = self.geometry.image_size
        mat, _ = self._mats(image.dtype)
        flat = image.reshape(-1, n * n)
        out = np.stack([mat @ row for row in flat])
        return out.reshape(image.shape[:-2] + self.sino_shape)

    def adjoint(self, sino: np.ndarray) -> np.ndarray:
        n = self.geometry.image_size
        _, mat_t = self._mats(sino.dtype)
        flat = sino.reshape(-1, self.matrix.shape[0])
        out = np.stack([mat_t @ row for row in flat])
        return out.reshape(sino.shape[:-2] + (n, n))

    def apply(self, x):
        """Differentiable forward projection of a (..., n, n) tensor."""
        out_shape = x.shape[:-2] + self.sino_shape
        return ops.linear_map(x, self.forward, self.adjoint, out_shape)

    def apply_adjoint(self, y):
        n = self.geometry.image_size
        return ops.linear_map(y, self.adjoint, self.forward, y.shape[:-2] + (n, n))


def forward_project(image: ImageGrid, geom: FanBeamGeometry | None = None, angles=None) -> Sinogram:
    """Line integrals of ``image`` along every source-to-detector-cell ray."""
    geom = geom or image.geometry
    if image.geometry.image_size != geom.image_size or \
            abs(image.geometry.fov_diameter - geom.fov_diameter) > 1e-12:
        raise ValueError("image does not match the geometry's field of view")
    angles = geom.full_angles() if angles is None else geom.validate_angles(angles)
    proj = Projector(geom, angles)
    return Sinogram(proj.apply(image.data), angles, geom)


def back_project(sino: Sinogram) -> ImageGrid:
    """Exact adjoint of :func:`forward_project` for the sinogram's view set."""
    proj = Projector(sino.geometry, sino.view_angles)
    return ImageGrid(proj.apply_adjoint(sino.data), sino.geometry)
