"""Fan-beam CT physics: geometry, projector, FBP, view sampling, phantoms, I/O."""

from .fbp import FBPOperator, fan_kernel, fbp, ramp_filter, ramp_kernel
from .geometry import FanBeamGeometry, ImageGrid, Sinogram
from .io import FormatError, load_image, load_sinogram, read_array, save_image, save_sinogram
from .phantoms import add_gaussian_noise, random_ellipse_phantom, shepp_logan
from .projector import Projector, back_project, forward_project, system_matrix
from .sampling import interp_views, interpolation_matrix, sample_sparse, sparse_indices

__all__ = [
    "FanBeamGeometry", "ImageGrid", "Sinogram", "forward_project", "back_project", "system_matrix",
    "Projector", "ramp_filter", "ramp_kernel", "fan_kernel", "fbp", "FBPOperator", "sample_sparse",
    "sparse_indices", "interp_views", "interpolation_matrix", "shepp_logan",
    "random_ellipse_phantom", "add_gaussian_noise", "save_image", "save_sinogram", "load_image",
    "load_sinogram", "read_array", "FormatError",
]
