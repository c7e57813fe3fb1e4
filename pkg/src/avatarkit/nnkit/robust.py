from __future__ import annotations

import numpy as np

from .autodiff import Tensor, log, mul, power


def barron_robust(x, alpha: float = 1.0, c: float = 0.01):
    """General robust kernel rho(x, alpha, c) with explicit alpha = 0 and alpha = 2 limits.

    Works on Tensors (differentiable) and on plain arrays/scalars.
    """
    if c <= 0:
        raise ValueError("scale c must be positive")
    if not isinstance(x, Tensor):
        return _barron_np(np.asarray(x, dtype=np.float64), alpha, c)
    z2 = power(mul(x, 1.0 / c), 2.0)
    if alpha == 2.0:
        return mul(z2, 0.5)
    if alpha == 0.0:
        return log(mul(z2, 0.5) + 1.0)
    b = abs(alpha - 2.0)
    return mul(power(mul(z2, 1.0 / b) + 1.0, alpha / 2.0) - 1.0, b / alpha)


def _barron_np(x: np.ndarray, alpha: float, c: float):
    z2 = (x / c) ** 2
    if alpha == 2.0:
        return 0.5 * z2
    if alpha == 0.0:
        return np.log1p(0.5 * z2)
    b = abs(alpha - 2.0)
    return b / alpha * ((z2 / b + 1.0) ** (alpha / 2.0) - 1.0)
