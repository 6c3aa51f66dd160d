"""Training and evaluation loops."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..diffcore import NonFiniteError, adam_step, backward, no_grad
from ..diffcore.tensor import Tensor
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .data import Sample
from .loss import dual_domain_loss
from .metrics import MetricsRecord, compute_metrics, psnr_from_rmse
from .model import MistModel, baseline_reconstruction, mist_forward

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """Raised when the loss or a layer output stops being finite."""

    def __init__(self, message: str, step: int, last_checkpoint: Path | None):
        super().__init__(message)
        self.step = step
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainResult:
    model: MistModel
    losses: list[float] = field(default_factory=list)
    epoch_metrics: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def _dtype(cfg: TrainConfig):
    return np.float32 if cfg.precision == "single" else np.float64


def smoothed(values, window: int = 20) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def training_step(model: MistModel, sample: Sample, cfg: TrainConfig) -> tuple[float, float]:
    dtype = _dtype(cfg)
    z0 = Tensor(sample.sparse.array[None, None].astype(dtype))
    out, inter = mist_forward(model, z0)
    image_label = Tensor(sample.phantom.array[None, None].astype(dtype))
    proj_label = Tensor((sample.label.array / model.scale)[None, None].astype(dtype))
    loss = dual_domain_loss(out, inter["z1"], image_label, proj_label, cfg.gamma)
    value = float(loss.data)
    rmse = float(np.sqrt(np.mean((out.data - image_label.data) ** 2)))
    backward(loss)
    adam_step(model.parameters(), lr=cfg.lr)
    return value, rmse


def train(model: MistModel, cfg: TrainConfig, corpus: list[Sample], out_dir=None,
          progress=None) -> TrainResult:
    """Adam with batch size 1 over ``cfg.epochs`` passes of a seeded shuffle.

    With ``out_dir`` a checkpoint ``epoch_XXX.ckpt`` is written after every
    epoch. A non-finite loss raises :class:`TrainingDiverged`; checkpoints
    already on disk are left untouched.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    model.astype(_dtype(cfg)).train()
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(model)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    last_good = None
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(corpus))
        epoch_losses, epoch_psnr = [], []
        for i in order:
            try:
                value, rmse = training_step(model, corpus[i], cfg)
            except NonFiniteError as err:
                raise TrainingDiverged(f"step {step}: {err}", step, last_good) from err
            if not np.isfinite(value):
                raise TrainingDiverged(f"step {step}: loss is {value}", step, last_good)
            result.losses.append(value)
            epoch_losses.append(value)
            epoch_psnr.append(psnr_from_rmse(rmse))
            step += 1
            if progress is not None:
                progress(step, value)
        summary = dict(epoch=epoch, steps=step, mean_loss=float(np.mean(epoch_losses)),
                       mean_train_psnr=float(np.mean(epoch_psnr)))
        result.epoch_metrics.append(summary)
        log.info("epoch %d: loss %.5f, train psnr %.2f dB", epoch, summary["mean_loss"],
                 summary["mean_train_psnr"])
        if out_dir is not None:
            path = out_dir / f"epoch_{epoch:03d}.ckpt"
            save_checkpoint(model, path)
            last_good = path
            result.checkpoints.append(path)
    model.eval()
    return result


def reconstruct(model: MistModel, sample: Sample, dtype=np.float64) -> np.ndarray:
    """Evaluation-mode forward pass without graph recording."""
    model.eval()
    with no_grad():
        out, _ = mist_forward(model, Tensor(sample.sparse.array[None, None].astype(dtype)))
    return out.data[0, 0].astype(np.float64)


def baseline(model: MistModel, sample: Sample) -> np.ndarray:
    with no_grad():
        return baseline_reconstruction(model, Tensor(sample.sparse.array[None, None])).data[0, 0]


def evaluate(model: MistModel, samples: list[Sample], dtype=np.float64) -> list[MetricsRecord]:
    return [compute_metrics(reconstruct(model, s, dtype), s.phantom) for s in samples]
