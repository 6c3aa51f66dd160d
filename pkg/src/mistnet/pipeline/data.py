"""Synthetic phantom corpus: phantom, full/label/sparse sinograms per sample."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import ctgeom
from ..ctgeom import FanBeamGeometry, ImageGrid, Sinogram
from ..diffcore import no_grad
from .config import ModelConfig


@dataclass
class Sample:
    id: str
    phantom: ImageGrid
    full: Sinogram
    label: Sinogram
    sparse: Sinogram


def phantom_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def make_sample(sample_id: str, phantom: ImageGrid, cfg: ModelConfig) -> Sample:
    geom = cfg.geometry
    with no_grad():
        full = ctgeom.forward_project(phantom, geom)
        label_idx = np.arange(0, geom.n_views_full, cfg.label_stride)
        label = Sinogram(full.array[label_idx], full.view_angles[label_idx], geom)
        sparse = ctgeom.sample_sparse(full, cfg.sparse_stride, cfg.sparse_count)
    return Sample(sample_id, phantom, full, label, Sinogram(sparse.array, sparse.view_angles, geom))


def build_corpus(cfg: ModelConfig, count: int, seed: int = 0, start: int = 0,
                 prefix: str = "ph") -> list[Sample]:
    """``count`` random-ellipse samples with indices start..start+count-1."""
    geom: FanBeamGeometry = cfg.geometry
    samples = []
    for i in range(start, start + count):
        ph = ctgeom.random_ellipse_phantom(geom.image_size, phantom_seed(seed, i), geometry=geom)
        samples.append(make_sample(f"{prefix}{i:04d}", ph, cfg))
    return samples


def train_test_split(cfg: ModelConfig, n_train: int, n_test: int, seed: int = 0):
    return build_corpus(cfg, n_train, seed, 0), build_corpus(cfg, n_test, seed, n_train)
