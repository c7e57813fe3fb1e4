"""Microfacet BRDF terms. Functions use only arithmetic operators so they accept
numpy arrays and autodiff Tensors alike."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mesh import SKIN
from ..nnkit import Tensor, ad

R_MIN = 0.04


def ggx_ndf(n_dot_h, r):
    """GGX / Trowbridge-Reitz density with alpha = r^2."""
    a2 = (r * r) * (r * r)
    d = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0
    return a2 / (np.pi * d * d)


def smith_g1(x, r):
    k = (r * r) * 0.5
    return x / (x * (1.0 - k) + k)


def smith_g(n_dot_v, n_dot_l, r):
    """Separable Schlick-GGX Smith term with k = alpha / 2."""
    return smith_g1(n_dot_v, r) * smith_g1(n_dot_l, r)


def fresnel_weight(cos_theta):
    """(1 - cos)^5, the Schlick interpolation weight."""
    m = 1.0 - cos_theta
    m2 = m * m
    return m2 * m2 * m


def fresnel_schlick(cos_theta, F0):
    return F0 + (1.0 - F0) * fresnel_weight(cos_theta)


def reflect(w_o, n):
    """Mirror w_o about n: 2 (w_o . n) n - w_o (last axis holds xyz)."""
    if isinstance(w_o, Tensor) or isinstance(n, Tensor):
        return ad.dot(w_o, n) * n * 2.0 - w_o
    w_o, n = np.asarray(w_o), np.asarray(n)
    return 2.0 * np.sum(w_o * n, axis=-1, keepdims=True) * n - w_o


@dataclass(frozen=True)
class BrdfConfig:
    F0_skin: float = 0.028
    F0_default: float = 0.047
    r_min: float = R_MIN

    def __post_init__(self):
        for f in (self.F0_skin, self.F0_default):
            if not 0.0 < f < 1.0:
                raise ValueError(f"F0 must lie in (0, 1), got {f}")

    def f0_for_labels(self, labels: np.ndarray, per_region: bool = True) -> np.ndarray:
        labels = np.asarray(labels)
        if not per_region:
            return np.full(labels.shape, self.F0_default)
        return np.where(labels == SKIN, self.F0_skin, self.F0_default)


@dataclass
class MaterialSample:
    rho: np.ndarray     # (N, 3)
    r: np.ndarray       # (N,)
    k: np.ndarray       # (N,)

    def __post_init__(self):
        self.rho = np.atleast_2d(np.asarray(self.rho, dtype=np.float64))
        n = len(self.rho)
        self.r = np.broadcast_to(np.asarray(self.r, dtype=np.float64), (n,)).copy()
        self.k = np.broadcast_to(np.asarray(self.k, dtype=np.float64), (n,)).copy()
        if (self.rho < 0).any() or (self.rho > 1).any():
            raise ValueError("albedo must lie in [0, 1]")
        if (self.r < R_MIN - 1e-12).any() or (self.r > 1).any():
            raise ValueError(f"roughness must lie in [{R_MIN}, 1]")
        if (self.k < 0).any():
            raise ValueError("specular intensity must be non-negative")

    @classmethod
    def uniform(cls, n: int, rho, r: float, k: float) -> "MaterialSample":
        return cls(np.tile(np.asarray(rho, float), (n, 1)), np.full(n, r), np.full(n, k))

    def take(self, idx) -> "MaterialSample":
        return MaterialSample(self.rho[idx], self.r[idx], self.k[idx])
