"""Reconstruction quality metrics: RMSE, PSNR and Gaussian-window SSIM."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 200.0


@dataclass(frozen=True)
class MetricsRecord:
    rmse: float
    psnr: float
    ssim: float

    def as_dict(self) -> dict:
        return asdict(self)


def _array(img) -> np.ndarray:
    arr = np.asarray(getattr(img, "array", img), dtype=np.float64)
    return arr.reshape(arr.shape[-2:])


def psnr_from_rmse(rmse: float, data_range: float = 1.0) -> float:
    if rmse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 20.0 * math.log10(data_range / rmse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, data_range: float = 1.0, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all positions where the window fits inside the image."""
    x, y = _array(a), _array(b)
    if x.shape != y.shape:
        raise ValueError("ssim inputs differ in shape")
    if min(x.shape) < window:
        raise ValueError(f"images must be at least {window}x{window}")
    w = gaussian_window(window, sigma)

    def filt(img):
        return np.einsum("ijkl,kl->ij", sliding_window_view(img, w.shape), w)

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def compute_metrics(recon, truth, data_range: float = 1.0) -> MetricsRecord:
    x, y = _array(recon), _array(truth)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    rmse = float(np.sqrt(np.mean((x - y) ** 2)))
    return MetricsRecord(rmse, psnr_from_rmse(rmse, data_range), ssim(x, y, data_range))
