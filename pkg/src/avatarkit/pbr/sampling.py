"""Counter-based random numbers and the direction samplers shared by the bakers
and the reference renderer.

Every uniform is a pure function of (seed, stream, index, dim), so results do
not depend on evaluation order or chunking.
"""
from __future__ import annotations

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)


def splitmix64(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64) + _GOLD
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def counter_uniform(seed: int, stream, index, dim: int = 0) -> np.ndarray:
    """Uniform [0,1) keyed by (seed, stream, index, dim); stream/index broadcast."""
    with np.errstate(over="ignore"):
        key = splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
        key = splitmix64(key ^ np.asarray(stream, dtype=np.uint64))
        h = splitmix64(key ^ (np.asarray(index, dtype=np.uint64) * np.uint64(8) + np.uint64(dim)))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def stratified_2d(seed: int, stream, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Jittered samples on [0,1)^2 for each stream: arrays of shape stream.shape + (n,).

    n must be a perfect square for full 2D stratification; otherwise the first
    coordinate is stratified and the second is plain random.
    """
    stream = np.asarray(stream, dtype=np.uint64)[..., None]
    idx = np.arange(n, dtype=np.uint64)
    j1 = counter_uniform(seed, stream, idx, 0)
    j2 = counter_uniform(seed, stream, idx, 1)
    s = int(round(np.sqrt(n)))
    if s * s == n:
        cell = np.arange(n)
        return (cell // s + j1) / s, (cell % s + j2) / s
    return (np.arange(n) + j1) / n, j2


def hammersley(n: int) -> tuple[np.ndarray, np.ndarray]:
    i = np.arange(n, dtype=np.uint64)
    bits = i.copy()
    bits = ((bits << np.uint64(16)) | (bits >> np.uint64(16))) & np.uint64(0xFFFFFFFF)
    bits = ((bits & np.uint64(0x55555555)) << np.uint64(1)) | ((bits & np.uint64(0xAAAAAAAA)) >> np.uint64(1))
    bits = ((bits & np.uint64(0x33333333)) << np.uint64(2)) | ((bits & np.uint64(0xCCCCCCCC)) >> np.uint64(2))
    bits = ((bits & np.uint64(0x0F0F0F0F)) << np.uint64(4)) | ((bits & np.uint64(0xF0F0F0F0)) >> np.uint64(4))
    bits = ((bits & np.uint64(0x00FF00FF)) << np.uint64(8)) | ((bits & np.uint64(0xFF00FF00)) >> np.uint64(8))
    return (i.astype(np.float64) + 0.5) / n, bits.astype(np.float64) / 4294967296.0


def ggx_half_local(u1, u2, r):
    """GGX-distributed half vectors in the z-up frame (pdf = D(h) * cos_h)."""
    a2 = (r * r) ** 2
    cos_t = np.sqrt((1.0 - u1) / (1.0 + (a2 - 1.0) * u1))
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * np.pi * u2
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)


def ggx_visible_local(v, u1, u2, r):
    """Visible-normal GGX sampling (z-up frame) for view directions v (..., 3).

    Returns half vectors h with pdf(h) = G1(v) max(0, v.h) D(h) / (n.v), where G1
    is the exact Smith masking term of GGX.
    """
    a = r * r
    vh = np.stack(np.broadcast_arrays(a * v[..., 0], a * v[..., 1], v[..., 2]), axis=-1)
    vh = vh / np.linalg.norm(vh, axis=-1, keepdims=True)
    lensq = vh[..., 0] ** 2 + vh[..., 1] ** 2
    inv = np.where(lensq > 0, 1.0 / np.sqrt(np.where(lensq > 0, lensq, 1.0)), 0.0)
    t1 = np.stack([np.where(lensq > 0, -vh[..., 1] * inv, 1.0), np.where(lensq > 0, vh[..., 0] * inv, 0.0),
                   np.zeros_like(lensq)], axis=-1)
    t2 = np.cross(vh, t1)
    rad = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    p1 = rad * np.cos(phi)
    p2 = rad * np.sin(phi)
    s = 0.5 * (1.0 + vh[..., 2])
    p2 = (1.0 - s) * np.sqrt(np.maximum(0.0, 1.0 - p1 * p1)) + s * p2
    p3 = np.sqrt(np.maximum(0.0, 1.0 - p1 * p1 - p2 * p2))
    nh = p1[..., None] * t1 + p2[..., None] * t2 + p3[..., None] * vh
    ne = np.stack([a * nh[..., 0], a * nh[..., 1], np.maximum(1e-12, nh[..., 2])], axis=-1)
    return ne / np.linalg.norm(ne, axis=-1, keepdims=True)


def smith_g1_exact(cos_v, r):
    """Exact Smith masking for GGX: 2 cos / (cos + sqrt(a^2 + (1 - a^2) cos^2))."""
    a2 = (r * r) ** 2
    return 2.0 * cos_v / (cos_v + np.sqrt(a2 + (1.0 - a2) * cos_v * cos_v))


def cosine_local(u1, u2):
    """Cosine-weighted hemisphere directions in the z-up frame (pdf = cos / pi)."""
    rad = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    return np.stack([rad * np.cos(phi), rad * np.sin(phi), np.sqrt(np.maximum(0.0, 1.0 - u1))], axis=-1)


def tangent_frame(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal (t, b) with t x b = n, continuous except on the n_z = -1 seam."""
    nx, ny, nz = n[..., 0], n[..., 1], n[..., 2]
    sign = np.where(nz >= 0, 1.0, -1.0)
    a = -1.0 / (sign + nz)
    b = nx * ny * a
    t = np.stack([1.0 + sign * nx * nx * a, sign * b, -sign * nx], axis=-1)
    bb = np.stack([b, sign + ny * ny * a, -ny], axis=-1)
    return t, bb


def to_world(local: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Rotate z-up local directions (..., S, 3) into the frame of normals n (..., 3)."""
    t, b = tangent_frame(n)
    return (local[..., 0:1] * t[..., None, :] + local[..., 1:2] * b[..., None, :]
            + local[..., 2:3] * n[..., None, :])
