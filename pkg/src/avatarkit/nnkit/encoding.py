"""Input encodings: sinusoidal frequency bands and a multiresolution hash grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, concat, cos, mul, sin

PRIMES = (np.uint64(1), np.uint64(2654435761), np.uint64(805459861))


def freq_encode(x, n_octaves: int) -> Tensor:
    """sin/cos of 2^k * pi * x for k < n_octaves; output width 2 * n_octaves * d.

    Layout is ``[sin(2^0 pi x), cos(2^0 pi x), sin(2^1 pi x), ...]`` with each
    block holding all d input dimensions.
    """
    if n_octaves < 1:
        raise ValueError("n_octaves must be >= 1")
    x = as_tensor(x)
    parts = []
    for k in range(n_octaves):
        xk = mul(x, (2.0 ** k) * np.pi)
        parts += [sin(xk), cos(xk)]
    return concat(parts, axis=-1)


class FrequencyEncoding:
    tag = "frequency"

    def __init__(self, in_dim: int, n_octaves: int = 6, include_input: bool = True):
        self.in_dim = in_dim
        self.n_octaves = n_octaves
        self.include_input = include_input

    @property
    def out_dim(self) -> int:
        return 2 * self.n_octaves * self.in_dim + (self.in_dim if self.include_input else 0)

    def __call__(self, x) -> Tensor:
        enc = freq_encode(x, self.n_octaves)
        return concat([as_tensor(x), enc], axis=-1) if self.include_input else enc

    def parameters(self) -> list[Tensor]:
        return []


class RawEncoding:
    tag = "raw"

    def __init__(self, in_dim: int):
        self.in_dim = in_dim
        self.out_dim = in_dim

    def __call__(self, x) -> Tensor:
        return as_tensor(x)

    def parameters(self) -> list[Tensor]:
        return []


@dataclass(frozen=True)
class HashGridSpec:
    levels: int = 8
    features: int = 2
    table_size: int = 2 ** 14
    base_resolution: int = 16
    max_resolution: int = 512

    def __post_init__(self):
        if self.base_resolution >= self.max_resolution:
            raise ValueError("base_resolution must be below max_resolution")
        if self.table_size < 1 or self.table_size & (self.table_size - 1):
            raise ValueError("table_size must be a power of two")

    @property
    def growth(self) -> float:
        if self.levels == 1:
            return 1.0
        return float(np.exp((np.log(self.max_resolution) - np.log(self.base_resolution))
                            / (self.levels - 1)))

    def resolution(self, level: int) -> int:
        return int(np.floor(self.base_resolution * self.growth ** level))

    @property
    def out_dim(self) -> int:
        return self.levels * self.features


def spatial_hash(corners: np.ndarray, table_size: int) -> np.ndarray:
    """XOR of coordinate * prime, reduced modulo the (power of two) table size."""
    c = corners.astype(np.uint64)
    h = (c[..., 0] * PRIMES[0]) ^ (c[..., 1] * PRIMES[1]) ^ (c[..., 2] * PRIMES[2])
    return (h & np.uint64(table_size - 1)).astype(np.int64)


_CORNER_OFFSETS = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64)


def hashgrid_encode(spec: HashGridSpec, tables, x, stats: dict | None = None) -> Tensor:
    """Trilinearly interpolated hash-table features, one block per level.

    ``tables`` has shape (levels, table_size, features); ``x`` is (N, 3) in the
    unit cube. Out-of-range points are clamped and counted in ``stats['clamped']``.
    Gradients reach both the table entries and ``x``.
    """
    tables = as_tensor(tables)
    x = as_tensor(x)
    xd = x.data
    inside = np.all((xd >= 0.0) & (xd <= 1.0), axis=-1)
    if stats is not None:
        stats["clamped"] = stats.get("clamped", 0) + int((~inside).sum())
    xc = np.clip(xd, 0.0, 1.0)
    n = xd.shape[0]
    L, T, F = spec.levels, spec.table_size, spec.features
    out = np.empty((n, L * F))
    cache = []
    for lvl in range(L):
        res = spec.resolution(lvl)
        pos = xc * res
        base = np.floor(pos).astype(np.int64)
        frac = pos - base
        corners = base[:, None, :] + _CORNER_OFFSETS[None]           # N,8,3
        idx = spatial_hash(corners, T)                                  # N,8
        sel = _CORNER_OFFSETS[None].astype(bool)                        # 1,8,3
        fw = np.where(sel, frac[:, None, :], 1.0 - frac[:, None, :])    # N,8,3
        w = fw.prod(axis=-1)                                            # N,8
        feats = tables.data[lvl][idx]                                   # N,8,F
        out[:, lvl * F:(lvl + 1) * F] = (w[..., None] * feats).sum(axis=1)
        cache.append((res, idx, fw, w, feats))
    grad_x_mask = inside[:, None]

    def bw(g):
        gt = np.zeros_like(tables.data) if tables.requires_grad else None
        gx = np.zeros_like(xd) if x.requires_grad else None
        for lvl, (res, idx, fw, w, feats) in enumerate(cache):
            gl = g[:, lvl * F:(lvl + 1) * F]                            # N,F
            if gt is not None:
                contrib = w[..., None] * gl[:, None, :]                 # N,8,F
                flat_idx = idx.ravel()
                for f in range(F):
                    gt[lvl, :, f] += np.bincount(flat_idx, weights=contrib[..., f].ravel(), minlength=T)
            if gx is not None:
                s = (feats * gl[:, None, :]).sum(axis=-1)                # N,8
                sign = np.where(_CORNER_OFFSETS[None].astype(bool), 1.0, -1.0)  # 1,8,3
                for d in range(3):
                    others = [e for e in range(3) if e != d]
                    dw = sign[..., d] * fw[..., others[0]] * fw[..., others[1]]
                    gx[:, d] += res * (s * dw).sum(axis=1)
        if gx is not None:
            gx = gx * grad_x_mask
        return gt, gx
    return Tensor.from_op(out, (tables, x), bw, "hashgrid")


class HashGridEncoding:
    tag = "hashgrid"

    def __init__(self, spec: HashGridSpec, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.spec = spec
        self.in_dim = 3
        self.tables = Tensor(rng.uniform(-1e-4, 1e-4, (spec.levels, spec.table_size, spec.features)),
                             requires_grad=True, name="hash_tables")
        self.stats: dict = {"clamped": 0}

    @property
    def out_dim(self) -> int:
        return self.spec.out_dim

    def __call__(self, x) -> Tensor:
        return hashgrid_encode(self.spec, self.tables, x, self.stats)

    def parameters(self) -> list[Tensor]:
        return [self.tables]
