"""Minimal module system: parameter registration, train/eval mode, layers."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .tensor import NonFiniteError, Parameter, Tensor


class Module:
    """Base class for networks built from :mod:`mistnet.diffcore` ops.

    Parameters, child modules and lists of child modules assigned as
    attributes are discovered automatically. Calling a module runs
    ``forward`` and raises :class:`NonFiniteError` naming the offending
    layer if the output contains NaN or Inf.
    """

    training: bool = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        try:
            out = self.forward(*args, **kwargs)
        except NonFiniteError as err:
            culprit = getattr(err, "module", None)
            for path, m in self.named_modules():
                if path and m is culprit:
                    renamed = NonFiniteError(f"non-finite output in layer '{path}' ({type(m).__name__})")
                    renamed.module = culprit
                    raise renamed from None
            raise
        # a non-finite sum is a cheap necessary condition; confirm elementwise
        if isinstance(out, Tensor) and not np.isfinite(out.data.sum()) and not np.all(np.isfinite(out.data)):
            err = NonFiniteError(f"non-finite output in layer {type(self).__name__}")
            err.module = self
            raise err
        return out

    # -- discovery -----------------------------------------------------------
    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._children():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(path + ".")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix: str = "") -> "Module":
        """Store each parameter's dotted path in ``Parameter.name``."""
        for path, p in self.named_parameters(prefix):
            p.name = path
        return self

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, m in self.named_modules():
            if isinstance(m, BatchNorm2d):
                base = f"{name}." if name else ""
                state[base + "running_mean"] = m.state.running_mean.copy()
                state[base + "running_var"] = m.state.running_var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, value in state.items():
            if np.shape(value) != own[name].shape:
                raise ValueError(f"shape mismatch for {name}: file has {np.shape(value)}, "
                                 f"model expects {own[name].shape}")
        params = dict(self.named_parameters())
        for name, m in self.named_modules():
            if isinstance(m, BatchNorm2d):
                base = f"{name}." if name else ""
                m.state.running_mean = np.array(state[base + "running_mean"], dtype=np.float64)
                m.state.running_var = np.array(state[base + "running_var"], dtype=np.float64)
        for name, p in params.items():
            p.assign(state[name])

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.astype(dtype)
        return self


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int = 3, rng: np.random.Generator | None = None,
                 bias: bool = True, padding: int | None = None, stride: int = 1):
        if kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cin, self.cout, self.kernel, self.stride = cin, cout, kernel, stride
        self.padding = kernel // 2 if padding is None else padding
        self.weight = Parameter(he_normal(rng, (cout, cin, kernel, kernel), cin * kernel * kernel))
        self.bias = Parameter(np.zeros(cout)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def zero_(self) -> None:
        self.weight.assign(np.zeros_like(self.weight.data))
        if self.bias is not None:
            self.bias.assign(np.zeros_like(self.bias.data))


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.eps = eps
        self.state = ops.BatchNormState(channels, momentum)

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm2d(x, self.gamma, self.beta, self.state, self.training, self.eps)


class LayerNorm(Module):
    def __init__(self, features: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(features))
        self.beta = Parameter(np.zeros(features))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layernorm(x, self.gamma, self.beta, self.eps)


class Linear(Module):
    """Dense layer over the last axis; weights drawn from N(0, std^2)."""

    def __init__(self, fin: int, fout: int, rng: np.random.Generator | None = None, std: float = 0.02):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(rng.normal(0.0, std, size=(fout, fin)))
        self.bias = Parameter(np.zeros(fout))

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)

    def zero_(self) -> None:
        self.weight.assign(np.zeros_like(self.weight.data))
        self.bias.assign(np.zeros_like(self.bias.data))
