"""Shifted-window transformer reconstruction head.

Feature maps travel between units as (1, C, H, W). Inside a unit the
tokens are kept channel-last as (1, H, W, C) so layer norm and the dense
layers act on the last axis. Windows are M x M pixels (patch size 1).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .diffcore import ops
from .diffcore.nn import Conv2d, LayerNorm, Linear, Module
from .diffcore.tensor import Parameter, Tensor

MASK_VALUE = -1e9

_PRESETS = {
    "T": dict(embed_dim=96, window_size=8, stc_layers=(2, 2, 6, 2), heads=(3, 6, 12, 24)),
    "S": dict(embed_dim=96, window_size=8, stc_layers=(2, 2, 18, 2), heads=(3, 6, 12, 24)),
    "B": dict(embed_dim=96, window_size=8, stc_layers=(6, 6, 6, 6), heads=(6, 6, 6, 6)),
    "L": dict(embed_dim=96, window_size=8, stc_layers=(8, 8, 8, 8), heads=(8, 8, 8, 8)),
    "desk": dict(embed_dim=32, window_size=4, stc_layers=(2, 2), heads=(2, 2)),
}


@dataclass(frozen=True)
class SwinConfig:
    embed_dim: int = 32
    window_size: int = 4
    stc_layers: tuple[int, ...] = (2, 2)
    heads: tuple[int, ...] = (2, 2)
    mlp_ratio: float = 4.0
    variant: str = "desk"
    zero_head: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stc_layers", tuple(int(v) for v in self.stc_layers))
        object.__setattr__(self, "heads", tuple(int(v) for v in self.heads))
        if len(self.stc_layers) != len(self.heads) or not self.stc_layers:
            raise ValueError("stc_layers and heads must be non-empty and of equal length")
        for h in self.heads:
            if self.embed_dim % h:
                raise ValueError(f"embed_dim {self.embed_dim} is not divisible by {h} heads")
        if any(n < 1 for n in self.stc_layers):
            raise ValueError("every unit needs at least one layer")
        if self.window_size < 1:
            raise ValueError("window_size must be positive")

    @classmethod
    def preset(cls, name: str, **overrides) -> "SwinConfig":
        if name not in _PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
        return cls(**{**_PRESETS[name], "variant": name, **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stc_layers"], d["heads"] = list(self.stc_layers), list(self.heads)
        return d


# -- windows and shifts ---------------------------------------------------------------

def _partition_tokens(x: Tensor, m: int) -> Tensor:
    """(1, H, W, C) -> (nW, M*M, C), windows in row-major order."""
    _, h, w, c = x.shape
    if h % m or w % m:
        raise ValueError(f"extents {h}x{w} are not divisible by window size {m}")
    t = ops.reshape(x, (h // m, m, w // m, m, c))
    t = ops.transpose(t, (0, 2, 1, 3, 4))
    return ops.reshape(t, ((h // m) * (w // m), m * m, c))


def _reverse_tokens(windows: Tensor, m: int, h: int, w: int) -> Tensor:
    c = windows.shape[-1]
    t = ops.reshape(windows, (h // m, w // m, m, m, c))
    t = ops.transpose(t, (0, 2, 1, 3, 4))
    return ops.reshape(t, (1, h, w, c))


def window_partition(x: Tensor, m: int) -> Tensor:
    """(1, C, H, W) feature map -> (nW, M*M, C) window tokens."""
    return _partition_tokens(ops.transpose(x, (0, 2, 3, 1)), m)


def window_reverse(windows: Tensor, m: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`window_partition`, returning (1, C, H, W)."""
    return ops.transpose(_reverse_tokens(windows, m, h, w), (0, 3, 1, 2))


def cyclic_shift(x: Tensor, dy: int, dx: int, axes: tuple[int, int] = (-2, -1)) -> Tensor:
    """Toroidal roll of the two spatial axes."""
    if dy == 0 and dx == 0:
        return x
    return ops.roll(x, (dy, dx), axes)


def relative_position_index(m: int) -> np.ndarray:
    """(M*M, M*M) lookup into a ((2M-1)^2)-row bias table."""
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (m - 1)
    return rel[0] * (2 * m - 1) + rel[1]


def shift_mask(h: int, w: int, m: int, shift: int) -> np.ndarray:
    """(nW, M*M, M*M) additive mask; pairs from different pre-shift regions get MASK_VALUE."""
    region = np.zeros((h, w))
    bounds = (slice(0, -m), slice(-m, -shift), slice(-shift, None))
    label = 0
    for rs in bounds:
        for cs in bounds:
            region[rs, cs] = label
            label += 1
    win = region.reshape(h // m, m, w // m, m).transpose(0, 2, 1, 3).reshape(-1, m * m)
    return np.where(win[:, :, None] != win[:, None, :], MASK_VALUE, 0.0)


# -- attention and layers ------------------------------------------------------------

class RelativePositionBias(Module):
    def __init__(self, window_size: int, heads: int, rng: np.random.Generator):
        self.window_size = window_size
        self.table = Parameter(rng.normal(0.0, 0.02, size=((2 * window_size - 1) ** 2, heads)))
        self._index = relative_position_index(window_size)

    @property
    def index_map(self) -> np.ndarray:
        return self._index

    def forward(self) -> Tensor:
        """Gathered bias as (heads, M*M, M*M)."""
        return ops.transpose(ops.gather(self.table, self._index), (2, 0, 1))


class WindowAttention(Module):
    def __init__(self, dim: int, heads: int, window_size: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"dim {dim} is not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.bias = RelativePositionBias(window_size, heads, rng)
        self.record = False
        self.last_attention: np.ndarray | None = None

    def forward(self, tokens: Tensor, mask: np.ndarray | None = None) -> Tensor:
        return window_attention(tokens, self, mask)


def window_attention(tokens: Tensor, attn: WindowAttention, mask: np.ndarray | None = None) -> Tensor:
    """Per-window multi-head attention softmax(q k^T / sqrt(d) + bias [+ mask]) v, then proj."""
    nw, n, c = tokens.shape
    heads = attn.heads
    if c % heads:
        raise ValueError(f"channels {c} are not divisible by {heads} heads")
    d = c // heads
    qkv = ops.reshape(attn.qkv(tokens), (nw, n, 3, heads, d))
    qkv = ops.transpose(qkv, (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    logits = ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(d))
    logits = logits + attn.bias()
    if mask is not None:
        logits = logits + Tensor(mask[:, None])
    weights = ops.softmax(logits, axis=-1)
    if attn.record:
        attn.last_attention = weights.data.copy()
    out = ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3))
    return attn.proj(ops.reshape(out, (nw, n, c)))


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class SwinLayer(Module):
    """LN -> (shifted) window attention -> residual, LN -> MLP -> residual."""

    def __init__(self, dim: int, heads: int, window_size: int, shift: int, mlp_ratio: float,
                 rng: np.random.Generator):
        self.window_size, self.shift = window_size, shift
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window_size, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, int(round(dim * mlp_ratio)), rng)
        self._mask_cache: dict[tuple[int, int], np.ndarray] = {}

    def _shift_for(self, h: int, w: int) -> int:
        # a single window already spans the map; shifting would only mask pairs
        return self.shift if min(h, w) > self.window_size else 0

    def _mask(self, h: int, w: int) -> np.ndarray | None:
        if not self._shift_for(h, w):
            return None
        if (h, w) not in self._mask_cache:
            self._mask_cache[(h, w)] = shift_mask(h, w, self.window_size, self.shift)
        return self._mask_cache[(h, w)]

    def forward(self, x: Tensor) -> Tensor:
        _, h, w, _ = x.shape
        m, shift = self.window_size, self._shift_for(h, w)
        y = self.norm1(x)
        y = cyclic_shift(y, -shift, -shift, axes=(1, 2))
        y = self.attn(_partition_tokens(y, m), self._mask(h, w))
        y = cyclic_shift(_reverse_tokens(y, m, h, w), shift, shift, axes=(1, 2))
        x = x + y
        return x + self.mlp(self.norm2(x))

    def zero_branches(self) -> None:
        self.attn.proj.zero_()
        self.mlp.fc2.zero_()


def swin_block_pair(x: Tensor, first: SwinLayer, second: SwinLayer) -> Tensor:
    """W-MSA layer followed by the SW-MSA layer on (1, H, W, C) tokens."""
    return second(first(x))


class STCUnit(Module):
    """Patch embed (1x1 tokens + LN), Swin layers, unembed, 3x3 conv, residual."""

    def __init__(self, dim: int, layers: int, heads: int, window_size: int, mlp_ratio: float,
                 rng: np.random.Generator):
        self.embed_norm = LayerNorm(dim)
        shift = window_size // 2
        self.layers = [SwinLayer(dim, heads, window_size, shift if i % 2 else 0, mlp_ratio, rng)
                       for i in range(layers)]
        self.conv = Conv2d(dim, dim, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        t = self.embed_norm(ops.transpose(x, (0, 2, 3, 1)))
        for layer in self.layers:
            t = layer(t)
        return self.conv(ops.transpose(t, (0, 3, 1, 2))) + x


def patch_embed(x: Tensor) -> Tensor:
    return ops.transpose(x, (0, 2, 3, 1))


def patch_unembed(tokens: Tensor) -> Tensor:
    return ops.transpose(tokens, (0, 3, 1, 2))


class Recformer(Module):
    def __init__(self, cfg: SwinConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.stem = Conv2d(1, cfg.embed_dim, 3, rng)
        self.units = [STCUnit(cfg.embed_dim, n, h, cfg.window_size, cfg.mlp_ratio, rng)
                      for n, h in zip(cfg.stc_layers, cfg.heads)]
        self.tail = Conv2d(cfg.embed_dim, 1, 3, rng)
        if cfg.zero_head:
            self.tail.zero_()

    def named_blocks(self) -> list[tuple[str, Module]]:
        units = [(f"D{i + 1}", u) for i, u in enumerate(self.units)]
        return [("D0", self.stem)] + units + [(f"D{len(self.units) + 1}", self.tail)]

    def layers(self) -> list[SwinLayer]:
        return [layer for u in self.units for layer in u.layers]

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        m = self.cfg.window_size
        pads = ((-h) % m, (-w) % m)
        inp = x
        if any(pads):
            inp = ops.pad2d(x, (0, pads[0], 0, pads[1]), mode="reflect")
        feat = self.stem(inp)
        for unit in self.units:
            feat = unit(feat)
        out = self.tail(feat) + inp
        if any(pads):
            out = ops.crop2d(out, h, w)
        return out


def build_recformer(cfg: SwinConfig, seed: int = 0) -> Recformer:
    return Recformer(cfg, seed)
