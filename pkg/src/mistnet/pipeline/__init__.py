"""Full reconstruction pipeline: model assembly, loss, metrics, training, checkpoints."""

from .checkpoint import (CheckpointError, CheckpointShapeError, load_checkpoint, load_into,
                         read_checkpoint, save_checkpoint)
from .config import VARIANTS, ModelConfig, TrainConfig
from .data import Sample, build_corpus, make_sample, train_test_split
from .loss import dual_domain_loss
from .metrics import MetricsRecord, compute_metrics, psnr_from_rmse, ssim
from .model import MistModel, baseline_reconstruction, build_variant, mist_forward
from .train import (TrainingDiverged, TrainResult, baseline, evaluate, reconstruct, smoothed,
                    train)

__all__ = [
    "ModelConfig", "TrainConfig", "VARIANTS", "MistModel", "build_variant", "mist_forward",
    "baseline_reconstruction", "dual_domain_loss", "MetricsRecord", "compute_metrics", "ssim",
    "psnr_from_rmse", "Sample", "build_corpus", "make_sample", "train_test_split", "train",
    "TrainResult", "TrainingDiverged", "evaluate", "reconstruct", "baseline", "smoothed",
    "save_checkpoint", "load_checkpoint", "read_checkpoint", "load_into", "CheckpointError",
    "CheckpointShapeError",
]
