"""sRGB transfer curve (IEC 61966-2-1 constants) for numpy arrays and Tensors."""
from __future__ import annotations

import numpy as np

from ..nnkit import Tensor, ad

BREAK_LINEAR = 0.0031308
BREAK_ENCODED = 0.04045


def srgb_encode(x):
    """Linear -> display sRGB. Negative inputs are clamped to 0."""
    if isinstance(x, Tensor):
        xc = ad.maximum(x, 1e-12)
        hi = ad.power(xc, 1.0 / 2.4) * 1.055 - 0.055
        return ad.where(x.data <= BREAK_LINEAR, ad.maximum(x, 0.0) * 12.92, hi)
    x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    return np.where(x <= BREAK_LINEAR, 12.92 * x, 1.055 * np.power(np.maximum(x, 1e-12), 1.0 / 2.4) - 0.055)


def srgb_decode(y):
    """Display sRGB -> linear. Values above 1 follow the power branch (HDR-safe)."""
    if isinstance(y, Tensor):
        yc = ad.maximum(y, BREAK_ENCODED)
        hi = ad.power((yc + 0.055) * (1.0 / 1.055), 2.4)
        return ad.where(y.data <= BREAK_ENCODED, y * (1.0 / 12.92), hi)
    y = np.asarray(y, dtype=np.float64)
    return np.where(y <= BREAK_ENCODED, y / 12.92, np.power((np.maximum(y, BREAK_ENCODED) + 0.055) / 1.055, 2.4))


def to_uint8(linear: np.ndarray) -> np.ndarray:
    return np.round(np.clip(srgb_encode(linear), 0.0, 1.0) * 255.0).astype(np.uint8)
