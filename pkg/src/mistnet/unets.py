"""Encoder-decoder block with skip connections and a residual output head.

Level ``k`` of the encoder carries ``base_channels * 2**k`` feature maps.
Encoder blocks are named A0..A{depth} and decoder blocks B0..B{depth-1};
``head`` is the final 1x1 convolution.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .diffcore import ops
from .diffcore.nn import BatchNorm2d, Conv2d, Module
from .diffcore.tensor import Tensor


@dataclass(frozen=True)
class EncoderDecoderConfig:
    base_channels: int = 16
    depth: int = 3
    in_channels: int = 1
    out_channels: int = 1
    final_residual: bool = True
    zero_head: bool = False

    def __post_init__(self):
        if self.base_channels < 1 or self.depth < 0:
            raise ValueError("base_channels must be positive and depth non-negative")
        if self.final_residual and self.in_channels != self.out_channels:
            raise ValueError("a residual head needs in_channels == out_channels")

    @classmethod
    def paper(cls, **overrides) -> "EncoderDecoderConfig":
        return cls(**{"base_channels": 32, "depth": 4, **overrides})

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def to_dict(self) -> dict:
        return asdict(self)


class ConvBNReLU(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.conv = Conv2d(cin, cout, 3, rng)
        self.bn = BatchNorm2d(cout)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))


class EncoderLevel(Module):
    """Optional 2x2 max-pool followed by two conv+BN+ReLU layers."""

    def __init__(self, cin: int, cout: int, pool: bool, rng: np.random.Generator):
        self.pool = pool
        self.conv1 = ConvBNReLU(cin, cout, rng)
        self.conv2 = ConvBNReLU(cout, cout, rng)

    def forward(self, x: Tensor) -> Tensor:
        if self.pool:
            x = ops.maxpool2(x)
        return self.conv2(self.conv1(x))


class DecoderLevel(Module):
    """Nearest upsample + conv, concatenation with the skip, then two convs."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.up = ConvBNReLU(cin, cout, rng)
        self.conv1 = ConvBNReLU(2 * cout, cout, rng)
        self.conv2 = ConvBNReLU(cout, cout, rng)

    def forward(self, x: Tensor, skip: Tensor | None) -> Tensor:
        x = self.up(ops.upsample2(x))
        if skip is None:
            # skip ablation probe: keep the wiring, feed zeros
            skip = Tensor(np.zeros_like(x.data))
        return self.conv2(self.conv1(ops.concat([x, skip], axis=1)))


class EncoderDecoder(Module):
    def __init__(self, cfg: EncoderDecoderConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = [EncoderLevel(cfg.in_channels if k == 0 else cfg.channels(k - 1),
                                     cfg.channels(k), k > 0, rng) for k in range(cfg.depth + 1)]
        self.decoder = [DecoderLevel(cfg.channels(k + 1), cfg.channels(k), rng)
                        for k in reversed(range(cfg.depth))]
        self.head = Conv2d(cfg.channels(0), cfg.out_channels, 1, rng)
        if cfg.zero_head:
            self.head.zero_()
        self.dropped_skip: int | None = None

    @property
    def multiple(self) -> int:
        return 2 ** self.cfg.depth

    def named_blocks(self) -> list[tuple[str, Module]]:
        """Table-style labels A0.., B0.. for every level in execution order."""
        enc = [(f"A{k}", m) for k, m in enumerate(self.encoder)]
        dec = [(f"B{k}", m) for k, m in enumerate(self.decoder)]
        return enc + dec + [(f"B{len(self.decoder)}", self.head)]

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.cfg.in_channels:
            raise ValueError(f"expected {self.cfg.in_channels} input channels, got {c}")
        if h % self.multiple or w % self.multiple:
            raise ValueError(f"spatial extents {h}x{w} are not divisible by {self.multiple}")
        skips = []
        feat = x
        for level in self.encoder:
            feat = level(feat)
            skips.append(feat)
        skips.pop()
        for level in self.decoder:
            k = len(skips) - 1
            skip = skips.pop()
            feat = level(feat, None if k == self.dropped_skip else skip)
        out = self.head(feat)
        return out + x if self.cfg.final_residual else out


def build_encoder_decoder(cfg: EncoderDecoderConfig, seed: int = 0) -> EncoderDecoder:
    return EncoderDecoder(cfg, seed)


def _reflect_pads(extent: int, multiple: int) -> tuple[int, int]:
    extra = (-extent) % multiple
    return extra // 2, extra - extra // 2


def ed_forward(net: EncoderDecoder, x: Tensor) -> Tensor:
    """Run ``net`` on inputs of any size by reflect-padding to the next multiple and cropping back."""
    h, w = x.shape[-2:]
    top, bottom = _reflect_pads(h, net.multiple)
    left, right = _reflect_pads(w, net.multiple)
    if not (top or bottom or left or right):
        return net(x)
    if max(top, bottom) >= h or max(left, right) >= w:
        raise ValueError(f"input {h}x{w} is too small to reflect-pad to a multiple of {net.multiple}")
    padded = ops.pad2d(x, (top, bottom, left, right), mode="reflect")
    out = net(padded)
    return ops.getitem(out, (slice(None), slice(None), slice(top, top + h), slice(left, left + w)))
