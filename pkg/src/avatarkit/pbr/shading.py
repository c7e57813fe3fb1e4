"""Split-sum shading of G-buffer samples."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ..nnkit import Tensor, ad, no_grad
from .brdf import reflect
from .fglut import FgLut
from .prefilter import PrefilteredEnv


class LightQuery(Protocol):
    def __call__(self, dirs, r) -> Tensor:
        """Pre-filtered radiance (M, 3) for unit directions (M, 3) and roughness (M,)."""


class LutLight:
    """Pre-filtered environment levels used as the light (relighting path)."""

    def __init__(self, pf: PrefilteredEnv):
        self.pf = pf

    def __call__(self, dirs, r) -> Tensor:
        return self.pf.lookup_tensor(dirs, r)


@dataclass
class ShadeResult:
    rgb: Tensor          # (N, 3) outgoing radiance
    diffuse: Tensor      # (N, 3) light at (n, r=1), the diffuse shading
    specular: Tensor     # (N, 3) light at (w_r, r)


def shade_splitsum(rho, r, k, n, w_o, light: LightQuery, lut: FgLut, F0) -> ShadeResult:
    """rho * PF(n, 1) + k * PF(w_r, r) * (F0 * scale + bias); pixels with n.w_o <= 0 are black."""
    rho, r, k, n, w_o = (ad.as_tensor(t) for t in (rho, r, k, n, w_o))
    N = n.shape[0]
    F0 = np.broadcast_to(np.asarray(F0, dtype=np.float64), (N,))
    ndv = ad.dot(n, w_o, keepdims=False)
    front = ndv.data > 0
    w_r = reflect(w_o, n)
    both = light(ad.concat([n, w_r], axis=0), ad.concat([Tensor(np.ones(N)), r], axis=0))
    diffuse, specular = both[:N], both[N:]
    sb = lut.lookup_tensor(r, ad.clip(ndv, 1e-4, 1.0))
    fg = sb[:, 0] * F0 + sb[:, 1]
    rgb = rho * diffuse + ad.reshape(k * fg, (N, 1)) * specular
    rgb = ad.where(front[:, None], rgb, 0.0)
    return ShadeResult(rgb, diffuse, specular)


def shade_splitsum_np(rho, r, k, n, w_o, light: LightQuery, lut: FgLut, F0) -> np.ndarray:
    with no_grad():
        return shade_splitsum(rho, r, k, n, w_o, light, lut, F0).rgb.data
