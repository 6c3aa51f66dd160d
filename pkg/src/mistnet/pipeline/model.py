"""Full dual-domain pipeline and its ablation variants.

Data flow for a sparse sinogram ``z0`` (all sinograms inside the model are
divided by the longest chord through the grid so they are O(1)):

    z1 = phi1(interp(z0))          completed sinogram at the label views
    s1 = phi2(fbp(z1))             first image estimate
    z2 = A s1                      re-projection at the label views
    z3 = phi3(z1 - z2)             projection residual
    s2 = phi4(fbp(z3))             image residual
    s3 = s1 + s2
    out = head(s3)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import ctgeom
from ..ctgeom import FanBeamGeometry, Sinogram
from ..diffcore import ops
from ..diffcore.nn import Module
from ..diffcore.tensor import Tensor
from ..edgenet import EdgeNet
from ..recformer import Recformer, SwinConfig
from ..unets import EncoderDecoder, EncoderDecoderConfig, ed_forward
from .config import ModelConfig


def _unet_cfg(scale: str, **kw) -> EncoderDecoderConfig:
    return EncoderDecoderConfig.paper(**kw) if scale == "paper" else EncoderDecoderConfig(**kw)


class MistModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        geom = cfg.geometry
        self.geometry = geom
        full = geom.full_angles()
        self.label_indices = np.arange(0, geom.n_views_full, cfg.label_stride)
        self.label_angles = full[self.label_indices]
        self.sparse_indices = ctgeom.sparse_indices(geom.n_views_full, cfg.sparse_stride, cfg.sparse_count)
        self.sparse_angles = full[self.sparse_indices]
        # positions of the sparse views inside the label view set
        self.sparse_in_label = self.sparse_indices // cfg.label_stride
        self.scale = geom.max_chord
        self._projector = ctgeom.Projector(geom, self.label_angles)
        self._fbp = ctgeom.FBPOperator(geom, self.label_angles)

        zero = cfg.zero_heads
        paper = cfg.scale == "paper"
        self.phi1 = EncoderDecoder(_unet_cfg(cfg.scale, zero_head=zero), seed + 1)
        if cfg.variant in ("MIST", "EE_RecNet"):
            width, blocks = (32, 8) if paper else (16, 4)
            self.phi2 = EdgeNet(width, blocks, seed + 2, zero_head=zero)
        else:
            self.phi2 = EncoderDecoder(_unet_cfg(cfg.scale, zero_head=zero), seed + 2)
        self.phi3 = self.phi4 = None
        if cfg.variant != "MU_RecNet":
            self.phi3 = EncoderDecoder(_unet_cfg(cfg.scale, zero_head=zero, final_residual=False), seed + 3)
            self.phi4 = EncoderDecoder(_unet_cfg(cfg.scale, zero_head=zero), seed + 4)
        if cfg.variant == "MIST":
            preset = "B" if paper and cfg.swin_preset == "desk" else cfg.swin_preset
            self.head = Recformer(SwinConfig.preset(preset, zero_head=zero), seed + 5)
        else:
            self.head = EncoderDecoder(_unet_cfg(cfg.scale, zero_head=zero), seed + 5)
        self.assign_names()

    @property
    def projector(self) -> ctgeom.Projector:
        return self._projector

    def sub_network_types(self) -> dict[str, str | None]:
        return {k: (type(getattr(self, k)).__name__ if getattr(self, k) is not None else None)
                for k in ("phi1", "phi2", "phi3", "phi4", "head")}

    # -- linear layers in normalised sinogram units ----------------------------------
    def fbp_layer(self, z: Tensor) -> Tensor:
        return self._fbp.apply(z * self.scale)

    def project_layer(self, image: Tensor) -> Tensor:
        return self._projector.apply(image) * (1.0 / self.scale)

    def interp_layer(self, z0: Tensor) -> Tensor:
        sino = Sinogram(z0, self.sparse_angles, self.geometry)
        return ctgeom.interp_views(sino, self.label_angles).data

    def normalise(self, sino) -> Tensor:
        data = sino.data if isinstance(sino, Sinogram) else sino
        return data * (1.0 / self.scale)

    def forward(self, z0) -> tuple[Tensor, dict]:
        return mist_forward(self, z0)


def _run(net, x: Tensor) -> Tensor:
    return ed_forward(net, x) if isinstance(net, EncoderDecoder) else net(x)


def check_sparse_input(model: MistModel, z0) -> Tensor:
    if isinstance(z0, Sinogram):
        if z0.geometry != model.geometry:
            raise ValueError("sinogram geometry differs from the model geometry")
        if z0.views != model.sparse_angles.size or not np.allclose(z0.view_angles, model.sparse_angles):
            raise ValueError(f"expected {model.sparse_angles.size} sparse views at stride "
                             f"{model.cfg.sparse_stride}, got {z0.views}")
        return z0.data
    if tuple(z0.shape[-2:]) != (model.sparse_angles.size, model.geometry.n_detectors):
        raise ValueError(f"sparse sinogram has shape {z0.shape}")
    return z0


def mist_forward(model: MistModel, z0) -> tuple[Tensor, dict]:
    """Run the pipeline on a sparse sinogram in physical units.

    Returns the final image tensor and the intermediates ``z1, z2, z3``
    (normalised sinograms at the label views), ``s1, s2, s3`` and
    ``head_in``/``head_out``. Variants without the residual branch report
    ``z2``, ``z3`` and ``s2`` as None.
    """
    data = check_sparse_input(model, z0)
    zin = model.normalise(data)
    z1 = _run(model.phi1, model.interp_layer(zin))
    s1 = _run(model.phi2, model.fbp_layer(z1))
    z2 = z3 = s2 = None
    if model.phi3 is not None:
        z2 = model.project_layer(s1)
        if model.cfg.residual_input == "z1-z2":
            residual = z1 - z2
        else:
            at_sparse = ops.getitem(z2, (slice(None), slice(None), model.sparse_in_label))
            residual = model.interp_layer(zin - at_sparse)
        z3 = _run(model.phi3, residual)
        s2 = _run(model.phi4, model.fbp_layer(z3))
        s3 = s1 + s2
    else:
        s3 = s1
    out = _run(model.head, s3)
    inter = dict(z1=z1, z2=z2, z3=z3, s1=s1, s2=s2, s3=s3, head_in=s3, head_out=out)
    return out, inter


def build_variant(kind: str = "MIST", scale: str = "desk", seed: int = 0,
                  geometry: FanBeamGeometry | None = None, **overrides) -> MistModel:
    cfg = ModelConfig(variant=kind, scale=scale, geometry=geometry or FanBeamGeometry(), **overrides)
    return MistModel(cfg, seed)


def baseline_reconstruction(model: MistModel, z0) -> Tensor:
    """Linear view interpolation followed by FBP (no learned parts)."""
    zin = model.normalise(check_sparse_input(model, z0))
    return model.fbp_layer(model.interp_layer(zin))
