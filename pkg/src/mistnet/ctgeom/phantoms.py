"""Synthetic phantoms on [0, 1] and image-domain Gaussian noise."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .geometry import FanBeamGeometry, ImageGrid

# (intensity, semi-axis a, semi-axis b, centre x, centre y, rotation in degrees)
# modified Shepp-Logan (Toft), coordinates normalised to [-1, 1]
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def _grid(size: int, supersample: int) -> tuple[np.ndarray, np.ndarray]:
    # sub-pixel sample positions in normalised coordinates, row 0 at +y
    step = 2.0 / size
    sub = (np.arange(size * supersample) + 0.5) / supersample
    coords = -1.0 + sub * step
    x, y = np.meshgrid(coords, coords[::-1])
    return x, y


def render_ellipses(ellipses, size: int, supersample: int = 8) -> np.ndarray:
    """Anti-aliased rendering of a sum of uniform ellipses.

    The ellipses are point-sampled on a grid ``supersample`` times finer,
    low-passed with a Gaussian of sigma ``(supersample - 1) / 2`` fine pixels
    and box-averaged down to ``size`` x ``size``.
    """
    x, y = _grid(size, supersample)
    img = np.zeros_like(x)
    for value, a, b, x0, y0, deg in ellipses:
        t = math.radians(deg)
        c, s = math.cos(t), math.sin(t)
        xr = (x - x0) * c + (y - y0) * s
        yr = -(x - x0) * s + (y - y0) * c
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    if supersample > 1:
        img = ndimage.gaussian_filter(img, (supersample - 1) / 2.0, mode="constant")
    return img.reshape(size, supersample, size, supersample).mean(axis=(1, 3))


def _geometry_for(size: int, geometry: FanBeamGeometry | None) -> FanBeamGeometry:
    if geometry is None:
        return FanBeamGeometry(image_size=size)
    if geometry.image_size != size:
        raise ValueError("phantom size differs from geometry.image_size")
    return geometry


def shepp_logan(size: int = 64, geometry: FanBeamGeometry | None = None) -> ImageGrid:
    """Modified Shepp-Logan head phantom scaled so its maximum is exactly 1."""
    if size < 16:
        raise ValueError("phantom size must be at least 16")
    img = np.clip(render_ellipses(_SHEPP_LOGAN, size), 0.0, None)
    img = np.clip(img / img.max(), 0.0, 1.0)
    return ImageGrid(img, _geometry_for(size, geometry))


def random_ellipse_phantom(size: int = 64, seed: int = 0, n_ellipses: int | None = None,
                           geometry: FanBeamGeometry | None = None) -> ImageGrid:
    """Random body-like phantom: one large outline plus smaller inserts, clipped to [0, 1].

    ``n_ellipses`` (3 to 8) defaults to a seeded random draw in that range.
    """
    if size < 16:
        raise ValueError("phantom size must be at least 16")
    rng = np.random.default_rng(seed)
    count = int(rng.integers(3, 9)) if n_ellipses is None else int(n_ellipses)
    if not 3 <= count <= 8:
        raise ValueError("n_ellipses must be between 3 and 8")
    ellipses = [(rng.uniform(0.3, 0.6), rng.uniform(0.55, 0.8), rng.uniform(0.55, 0.8),
                 rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(0, 180))]
    for _ in range(count - 1):
        r = rng.uniform(0.0, 0.5)
        phi = rng.uniform(0, 2 * np.pi)
        ellipses.append((rng.uniform(-0.3, 0.5), rng.uniform(0.04, 0.25), rng.uniform(0.04, 0.25),
                         r * math.cos(phi), r * math.sin(phi), rng.uniform(0, 180)))
    img = np.clip(render_ellipses(ellipses, size, supersample=4), 0.0, 1.0)
    return ImageGrid(img, _geometry_for(size, geometry))


def add_gaussian_noise(image: ImageGrid, mean: float = 0.0, variance: float = 0.01,
                       seed: int = 0) -> ImageGrid:
    """Add i.i.d. N(mean, variance) noise to every pixel (no clipping)."""
    if variance < 0:
        raise ValueError("variance must be non-negative")
    arr = image.array
    if variance == 0 and mean == 0:
        return ImageGrid(arr.copy(), image.geometry)
    rng = np.random.default_rng(seed)
    noise = rng.normal(mean, math.sqrt(variance), size=arr.shape)
    return ImageGrid(arr + noise, image.geometry)
