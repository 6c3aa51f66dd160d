"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_gradient(f: Callable[[], float], array: np.ndarray, h: float = 1e-4,
                       indices: Sequence[tuple[int, ...]] | None = None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``array`` (perturbed in place).

    With ``indices`` only those entries are probed; the rest stay zero.
    """
    grad = np.zeros_like(array, dtype=np.float64)
    it = indices if indices is not None else list(np.ndindex(array.shape))
    for idx in it:
        old = array[idx]
        array[idx] = old + h
        fp = f()
        array[idx] = old - h
        fm = f()
        array[idx] = old
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| / max(max|a|, max|n|), 0 when both vanish."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-4,
                    max_entries: int | None = None, seed: int = 0) -> float:
    """Largest relative error between backprop and finite differences over ``tensors``.

    ``loss_fn`` must rebuild the graph from the current tensor values on every
    call. With ``max_entries`` a random subset of entries per tensor is probed.
    """
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        indices = None
        if max_entries is not None and t.size > max_entries:
            flat = rng.choice(t.size, size=max_entries, replace=False)
            indices = [np.unravel_index(i, t.shape) for i in flat]
        numeric = numerical_gradient(lambda: float(loss_fn().data), t.data, h, indices)
        if indices is not None:
            mask = np.zeros(t.shape, dtype=bool)
            for idx in indices:
                mask[idx] = True
            analytic = np.where(mask, analytic, 0.0)
        worst = max(worst, relative_error(analytic, numeric))
        t.grad = None
    return worst
