"""BRDF integration table over (roughness, n.v) in scale/bias form."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..nnkit import Tensor, ad
from .brdf import fresnel_weight, smith_g
from .sampling import ggx_visible_local, smith_g1_exact, stratified_2d

MAGIC = b"FGLT"


class FgLutError(ValueError):
    pass


def cell_centers(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


@dataclass
class FgLut:
    """table[i, j] = (scale, bias) at roughness (i+0.5)/R and cos = (j+0.5)/C."""
    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 3 or self.table.shape[2] != 2:
            raise FgLutError(f"table must be (R, C, 2), got {self.table.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.table.shape[:2]

    def _coords(self, r, cos):
        R, C = self.shape
        fy = np.clip(np.asarray(r, dtype=np.float64) * R - 0.5, 0.0, R - 1.0)
        fx = np.clip(np.asarray(cos, dtype=np.float64) * C - 0.5, 0.0, C - 1.0)
        y0 = np.minimum(np.floor(fy).astype(np.int64), max(R - 2, 0))
        x0 = np.minimum(np.floor(fx).astype(np.int64), max(C - 2, 0))
        y1, x1 = np.minimum(y0 + 1, R - 1), np.minimum(x0 + 1, C - 1)
        return fy, fx, y0, x0, y1, x1

    def lookup(self, r, cos) -> np.ndarray:
        """Bilinear (scale, bias), clamped at the table border. Shape (..., 2)."""
        fy, fx, y0, x0, y1, x1 = self._coords(r, cos)
        ty, tx = (fy - y0)[..., None], (fx - x0)[..., None]
        T = self.table
        top = T[y0, x0] * (1 - tx) + T[y0, x1] * tx
        bot = T[y1, x0] * (1 - tx) + T[y1, x1] * tx
        return top * (1 - ty) + bot * ty

    def lookup_tensor(self, r, cos) -> Tensor:
        """Differentiable lookup in r and cos (zero gradient where clamped)."""
        r, cos = ad.as_tensor(r), ad.as_tensor(cos)
        R, C = self.shape
        fy, fx, y0, x0, y1, x1 = self._coords(r.data, cos.data)
        ty, tx = (fy - y0)[..., None], (fx - x0)[..., None]
        T = self.table
        a, b, c, d = T[y0, x0], T[y0, x1], T[y1, x0], T[y1, x1]
        out = (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty
        inside_y = (r.data * R - 0.5 > 0) & (r.data * R - 0.5 < R - 1)
        inside_x = (cos.data * C - 0.5 > 0) & (cos.data * C - 0.5 < C - 1)
        d_dy = ((c - a) * (1 - tx) + (d - b) * tx) * R * inside_y[..., None]
        d_dx = ((b - a) * (1 - ty) + (d - c) * ty) * C * inside_x[..., None]

        def bw(g):
            return (np.sum(g * d_dy, axis=-1) if r.requires_grad else None,
                    np.sum(g * d_dx, axis=-1) if cos.requires_grad else None)
        return Tensor.from_op(out, (r, cos), bw, "fglut")

    def response(self, r, cos, F0) -> np.ndarray:
        sb = self.lookup(r, cos)
        return F0 * sb[..., 0] + sb[..., 1]


def bake_fg_lut(resolution: tuple[int, int] = (64, 64), samples: int = 4096, seed: int = 0) -> FgLut:
    """Monte-Carlo bake with GGX visible-normal importance sampling, stratified and
    seeded per cell."""
    if samples < 1024:
        raise FgLutError("at least 1024 samples per cell are required")
    R, C = resolution
    table = np.empty((R, C, 2))
    cos_v = cell_centers(C)
    sin_v = np.sqrt(1.0 - cos_v ** 2)
    v = np.stack([sin_v, np.zeros(C), cos_v], axis=-1)[:, None, :]
    for i, r in enumerate(cell_centers(R)):
        u1, u2 = stratified_2d(seed, i * C + np.arange(C), samples)
        h = ggx_visible_local(v, u1, u2, r)
        vh = np.sum(v * h, axis=-1)
        l_z = 2.0 * vh * h[..., 2] - v[..., 2]
        ok = (l_z > 0) & (vh > 0)
        nl = np.where(ok, l_z, 1.0)
        # f cos / pdf with visible-normal sampling reduces to G(v, l) / G1_exact(v)
        w = np.where(ok, smith_g(cos_v[:, None], nl, r) / smith_g1_exact(cos_v[:, None], r), 0.0)
        fc = fresnel_weight(np.clip(vh, 0.0, 1.0))
        table[i, :, 0] = np.mean((1.0 - fc) * w, axis=1)
        table[i, :, 1] = np.mean(fc * w, axis=1)
    lut = FgLut(table)
    check_lut(lut)
    return lut


def check_lut(lut: FgLut, tol: float = 1e-2) -> None:
    t = lut.table
    if not np.all(np.isfinite(t)) or (t < 0).any():
        raise FgLutError("LUT contains negative or non-finite values")
    if (t.sum(axis=-1) > 1.0 + tol).any():
        raise FgLutError("LUT violates energy bound scale + bias <= 1")


def save_fglut(path, lut: FgLut) -> None:
    R, C = lut.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", R, C))
        fh.write(lut.table.astype("<f4").tobytes())


def load_fglut(path) -> FgLut:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FgLutError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise FgLutError(f"{path}: truncated header")
    R, C = struct.unpack("<II", raw[4:12])
    body = raw[12:]
    if len(body) != R * C * 2 * 4:
        raise FgLutError(f"{path}: expected {R * C * 8} payload bytes, found {len(body)}")
    return FgLut(np.frombuffer(body, dtype="<f4").reshape(R, C, 2).astype(np.float64))
