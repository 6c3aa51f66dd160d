"""Model and training configuration records."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from ..ctgeom import FanBeamGeometry

VARIANTS = ("MIST", "DU_RecNet", "MU_RecNet", "EE_RecNet")
RESIDUAL_INPUTS = ("z1-z2", "z0-z2")


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to rebuild a model with identical parameter shapes.

    ``sparse_stride``/``sparse_count`` index the full view set of the
    geometry, ``label_stride`` picks the dense label views from it.
    ``zero_heads`` zero-initialises the last layer of every sub-network so an
    untrained model reproduces the interpolation + FBP baseline.
    """

    variant: str = "MIST"
    scale: str = "desk"
    swin_preset: str = "desk"
    sparse_stride: int = 6
    sparse_count: int = 30
    label_stride: int = 2
    residual_input: str = "z1-z2"
    zero_heads: bool = True
    geometry: FanBeamGeometry = field(default_factory=FanBeamGeometry)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.scale not in ("desk", "paper"):
            raise ValueError("scale must be 'desk' or 'paper'")
        if self.residual_input not in RESIDUAL_INPUTS:
            raise ValueError(f"residual_input must be one of {RESIDUAL_INPUTS}")
        if self.sparse_stride % self.label_stride:
            raise ValueError("sparse views must be a subset of the label views "
                             "(sparse_stride divisible by label_stride)")
        if self.sparse_stride * (self.sparse_count - 1) >= self.geometry.n_views_full:
            raise ValueError("sparse views exceed the full view set")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometry"] = self.geometry.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["geometry"] = FanBeamGeometry(**d.get("geometry", {}))
        return cls(**d)

    def digest(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2.5e-4
    epochs: int = 25
    batch_size: int = 1
    gamma: float = 0.1
    seed: int = 0
    precision: str = "double"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.batch_size != 1:
            raise ValueError("only batch_size 1 is supported")
        if self.precision not in ("single", "double"):
            raise ValueError("precision must be 'single' or 'double'")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
