"""Masked image metrics (L1, PSNR, SSIM) and normal similarity against ground truth."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .pbr import srgb_encode
from .raster import GBuffer

PSNR_CAP = 99.0
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5                  # 11 x 11 window
SSIM_K1, SSIM_K2 = 0.01, 0.03


def to_display(img: np.ndarray) -> np.ndarray:
    """Linear radiance -> sRGB-encoded values clipped to [0, 1]."""
    return np.clip(srgb_encode(np.clip(img, 0.0, None)), 0.0, 1.0)


def psnr(mse: float, peak: float = 1.0) -> float:
    if mse <= 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse)))


def ssim_map(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> np.ndarray:
    """Per-pixel SSIM (mean over channels) with a Gaussian window."""
    a = np.atleast_3d(np.asarray(a, dtype=np.float64))
    b = np.atleast_3d(np.asarray(b, dtype=np.float64))
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    trunc = SSIM_RADIUS / SSIM_SIGMA
    out = np.zeros(a.shape[:2])
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]

        def blur(z):
            return gaussian_filter(z, SSIM_SIGMA, truncate=trunc, mode="reflect")
        mx, my = blur(x), blur(y)
        vx = blur(x * x) - mx * mx
        vy = blur(y * y) - my * my
        cxy = blur(x * y) - mx * my
        out += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return out / a.shape[2]


def image_metrics(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> dict[str, float]:
    """L1, PSNR and SSIM over the masked region; empty mask -> {} (metrics absent)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    m = np.ones(pred.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not m.any():
        return {}
    d = (pred - gt)[m]
    return {"l1": float(np.abs(d).mean()), "psnr": psnr(float(np.mean(d * d))),
            "ssim": float(ssim_map(pred, gt)[m].mean())}


def normal_similarity(pred: GBuffer, gt: GBuffer) -> float | None:
    """Mean cosine between predicted and ground-truth normals where both cover a pixel."""
    both = pred.mask & gt.mask
    if not both.any():
        return None
    return float(np.mean(np.sum(pred.n_d[both] * gt.n_d[both], axis=-1)))


def write_metrics_csv(path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
