"""Scanner description and the two array containers (images and sinograms)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..diffcore import Tensor


@dataclass(frozen=True)
class FanBeamGeometry:
    """Fan-beam scanner with an equiangular detector arc centred on the source.

    Lengths are in cm. The detector fan is wide enough that the circle
    circumscribing the square image grid is inside every view, so every
    pixel is seen by every ray fan.
    """

    source_to_isocenter: float = 53.85
    source_to_detector: float = 103.68
    n_detectors: int = 96
    n_views_full: int = 180
    angular_range: float = 2.0 * math.pi
    fov_diameter: float = 49.8
    image_size: int = 64

    def __post_init__(self):
        if not self.source_to_detector > self.source_to_isocenter > self.fov_diameter / 2:
            raise ValueError("need source_to_detector > source_to_isocenter > fov_diameter / 2")
        if self.fov_diameter / math.sqrt(2.0) >= self.source_to_isocenter:
            raise ValueError("source sits inside the circle circumscribing the image grid")
        if self.n_detectors < 2 or self.n_views_full < 1 or self.image_size < 1:
            raise ValueError("detector, view and image counts must be positive")
        if not 0 < self.angular_range <= 2.0 * math.pi + 1e-12:
            raise ValueError("angular_range must lie in (0, 2*pi]")

    @property
    def pixel_pitch(self) -> float:
        return self.fov_diameter / self.image_size

    @property
    def fan_half_angle(self) -> float:
        """Half-angle of the detector fan (covers the grid's circumscribed circle)."""
        return math.asin(self.fov_diameter / math.sqrt(2.0) / self.source_to_isocenter)

    @property
    def detector_spacing(self) -> float:
        """Angular width of one detector cell in radians."""
        return 2.0 * self.fan_half_angle / self.n_detectors

    def detector_angles(self) -> np.ndarray:
        """Fan angle of each detector-cell centre, relative to the central ray."""
        j = np.arange(self.n_detectors, dtype=np.float64)
        return (j - (self.n_detectors - 1) / 2.0) * self.detector_spacing

    def full_angles(self) -> np.ndarray:
        return np.arange(self.n_views_full, dtype=np.float64) * (self.angular_range / self.n_views_full)

    @property
    def max_chord(self) -> float:
        """Longest path through the image grid (its diagonal)."""
        return self.fov_diameter * math.sqrt(2.0)

    def validate_angles(self, angles) -> np.ndarray:
        angles = np.asarray(angles, dtype=np.float64).reshape(-1)
        if angles.size == 0:
            raise ValueError("at least one view angle is required")
        tol = 1e-12
        if np.any(angles < -tol) or np.any(angles > self.angular_range + tol):
            raise ValueError("view angle outside [0, angular_range]")
        return angles

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _as_4d(data) -> Tensor:
    t = data if isinstance(data, Tensor) else Tensor(np.asarray(data, dtype=np.float64))
    if t.ndim == 2:
        from ..diffcore import ops
        t = ops.reshape(t, (1, 1) + t.shape)
    if t.ndim != 4 or t.shape[:2] != (1, 1):
        raise ValueError(f"expected a 2-D array or a (1, 1, H, W) tensor, got {t.shape}")
    return t


@dataclass
class ImageGrid:
    """Square image on the geometry's field of view; ``data`` is (1, 1, size, size)."""

    data: Tensor
    geometry: FanBeamGeometry = field(default_factory=FanBeamGeometry)

    def __post_init__(self):
        self.data = _as_4d(self.data)
        n = self.geometry.image_size
        if self.data.shape[2:] != (n, n):
            raise ValueError(f"image is {self.data.shape[2:]}, geometry expects {n}x{n}")

    @property
    def size(self) -> int:
        return self.geometry.image_size

    @property
    def pixel_pitch(self) -> float:
        return self.geometry.pixel_pitch

    @property
    def array(self) -> np.ndarray:
        return self.data.data[0, 0]


@dataclass
class Sinogram:
    """Line integrals indexed by (view, detector); ``data`` is (1, 1, views, n_detectors)."""

    data: Tensor
    view_angles: np.ndarray
    geometry: FanBeamGeometry = field(default_factory=FanBeamGeometry)

    def __post_init__(self):
        self.data = _as_4d(self.data)
        self.view_angles = np.asarray(self.view_angles, dtype=np.float64).reshape(-1)
        if self.data.shape[2] != self.view_angles.size:
            raise ValueError("number of rows differs from number of view angles")
        if self.data.shape[3] != self.geometry.n_detectors:
            raise ValueError("number of columns differs from the geometry's detector count")
        if self.view_angles.size > 1 and np.any(np.diff(self.view_angles) <= 0):
            raise ValueError("view angles must be strictly increasing")

    @property
    def views(self) -> int:
        return self.view_angles.size

    @property
    def array(self) -> np.ndarray:
        return self.data.data[0, 0]
