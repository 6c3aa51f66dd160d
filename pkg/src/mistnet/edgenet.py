"""Sobel-initialised edge-enhancement network with dense concatenations."""

from __future__ import annotations

import numpy as np

from .diffcore import ops
from .diffcore.nn import Conv2d, Module
from .diffcore.tensor import Parameter, Tensor, as_tensor

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
SOBEL_DIAG = np.array([[0.0, 1.0, 2.0], [-1.0, 0.0, 1.0], [-2.0, -1.0, 0.0]])
SOBEL_ANTIDIAG = np.fliplr(SOBEL_DIAG).T.copy()
CANONICAL = (SOBEL_X, SOBEL_Y, SOBEL_DIAG, SOBEL_ANTIDIAG)


def sobel_kernels(n_filters: int, rng: np.random.Generator, jitter: float = 0.1) -> np.ndarray:
    """(n_filters, 1, 3, 3) bank: the four canonical kernels, then jittered copies."""
    bank = np.empty((n_filters, 1, 3, 3))
    for i in range(n_filters):
        scale = 1.0 if i < len(CANONICAL) else rng.uniform(1.0 - jitter, 1.0 + jitter)
        bank[i, 0] = scale * CANONICAL[i % len(CANONICAL)]
    return bank


def sobel_gradients(image, swap_direction: bool = False):
    """Fixed-kernel Sobel responses of a (1, 1, H, W) image (or ImageGrid).

    Returns ``(gx, gy, magnitude, direction)`` as arrays over the valid
    (H-2, W-2) interior. ``direction`` is ``arctan(gx / gy)``; with
    ``swap_direction`` it is ``arctan(gy / gx)``. A zero denominator maps to
    ``sign(numerator) * pi / 2``.
    """
    arr = np.asarray(getattr(image, "array", image), dtype=np.float64)
    arr = arr.reshape(arr.shape[-2:])
    if min(arr.shape) < 3:
        raise ValueError("image must be at least 3x3")
    x = Tensor(arr[None, None])
    weights = Tensor(np.stack([SOBEL_X, SOBEL_Y])[:, None])
    out = ops.conv2d(x, weights).data[0]
    gx, gy = out[0], out[1]
    magnitude = np.sqrt(gx * gx + gy * gy)
    num, den = (gy, gx) if swap_direction else (gx, gy)
    safe = np.where(den == 0.0, 1.0, den)
    direction = np.where(den == 0.0, np.sign(num) * np.pi / 2.0, np.arctan(num / safe))
    return gx, gy, magnitude, direction


class SobelBank(Module):
    """Trainable 1 -> n_filters convolution initialised from Sobel kernels (no bias)."""

    def __init__(self, n_filters: int, rng: np.random.Generator):
        self.weight = Parameter(sobel_kernels(n_filters, rng))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, None, padding=1)


class DenseStage(Module):
    def __init__(self, cin: int, width: int, rng: np.random.Generator):
        self.conv1 = Conv2d(cin, width, 3, rng)
        self.conv2 = Conv2d(width, width, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.conv2(ops.relu(self.conv1(x))))


class EdgeNet(Module):
    """Sobel bank, ``n_dense_blocks - 1`` dense stages and a final two-conv stage.

    The bank output is concatenated with the input image (n_filters + 1
    channels). Every dense stage output is concatenated with that tensor
    again, so later stages see 2 * n_filters + 1 channels. The last stage
    maps back to one channel and the input image is added.
    """

    def __init__(self, n_filters: int = 16, n_dense_blocks: int = 4, seed: int = 0,
                 zero_head: bool = False):
        if n_dense_blocks < 1:
            raise ValueError("need at least one dense block")
        rng = np.random.default_rng(seed)
        self.n_filters = n_filters
        self.bank = SobelBank(n_filters, rng)
        stem = n_filters + 1
        self.stages = [DenseStage(stem if k == 0 else stem + n_filters, n_filters, rng)
                       for k in range(n_dense_blocks - 1)]
        last_in = stem if n_dense_blocks == 1 else stem + n_filters
        self.last = Conv2d(last_in, n_filters, 3, rng)
        self.out = Conv2d(n_filters, 1, 3, rng)
        if zero_head:
            self.out.zero_()
        self.trace: list[int] | None = None

    def forward(self, x: Tensor) -> Tensor:
        stem = ops.concat([self.bank(x), x], axis=1)
        trace = [stem.shape[1]]
        feat = stem
        for stage in self.stages:
            feat = ops.concat([stage(feat), stem], axis=1)
            trace.append(feat.shape[1])
        y = self.out(ops.relu(self.last(feat)))
        trace.append(y.shape[1])
        self.trace = trace
        return y + x


def build_edge_net(n_filters: int = 16, n_dense_blocks: int = 4, seed: int = 0,
                   zero_head: bool = False) -> EdgeNet:
    return EdgeNet(n_filters, n_dense_blocks, seed, zero_head)


def bank_response_energy(net: EdgeNet, image) -> float:
    """Sum of squared bank responses over the valid interior of ``image``."""
    x = as_tensor(np.asarray(getattr(image, "array", image), dtype=np.float64)[None, None])
    resp = net.bank(x).data[..., 1:-1, 1:-1]
    return float(np.sum(resp * resp))
