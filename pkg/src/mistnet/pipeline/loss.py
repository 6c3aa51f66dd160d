"""Weighted image + projection MSE."""

from __future__ import annotations

from ..ctgeom import ImageGrid, Sinogram
from ..diffcore import ops
from ..diffcore.tensor import Tensor


def dual_domain_loss(image_out: Tensor, z1: Tensor, image_label, proj_label, gamma: float = 0.1,
                     proj_scale: float = 1.0) -> Tensor:
    """mse(image_out, image_label) + gamma * mse(z1, proj_label / proj_scale).

    ``z1`` is the completed sinogram in the model's normalised units, so a
    physical label sinogram is divided by ``proj_scale``. With ``gamma == 0``
    the projection term is not even built.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    img = image_label.data if isinstance(image_label, ImageGrid) else image_label
    loss = ops.mse(image_out, img)
    if gamma == 0:
        return loss
    proj = proj_label.data if isinstance(proj_label, Sinogram) else proj_label
    if proj_scale != 1.0:
        proj = proj * (1.0 / proj_scale)
    return loss + ops.mse(z1, proj) * gamma
