from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5, max_entries: int | None = None,
                 rng: np.random.Generator | None = None):
    """Central finite differences of scalar ``fn()`` w.r.t. entries of ``t``.

    Returns (flat indices probed, numeric gradient at those indices).
    """
    flat = t.data.reshape(-1)
    idx = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        rng = rng or np.random.default_rng(0)
        idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
    out = np.empty(idx.size)
    for n, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = float(fn().data)
        flat[i] = old - h
        fm = float(fn().data)
        flat[i] = old
        out[n] = (fp - fm) / (2 * h)
    return idx, out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
                    max_entries: int | None = 40, floor: float = 1e-6) -> float:
    """Worst relative error between reverse-mode and central-difference gradients."""
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    out = fn()
    out.backward()
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        idx, num = numeric_grad(fn, t, h, max_entries)
        worst = max(worst, max_rel_error(analytic.reshape(-1)[idx], num, floor))
    return worst
