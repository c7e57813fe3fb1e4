"""Independent brute-force estimator of the BRDF integration table (numba).

It draws half vectors from D(h) cos(h) (not the visible-normal sampler used by
the baker), evaluates f_r * cos / pdf term by term from raw D, G and F, and uses
its own random stream, so agreement with the baked table is meaningful.
"""
from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True)
def _row(r, cos_vals, u1, u2):
    alpha = r * r
    a2 = alpha * alpha
    kk = alpha / 2.0
    n = u1.shape[0]
    hx = np.empty(n)
    hz = np.empty(n)
    dens = np.empty(n)
    for s in range(n):
        ct = math.sqrt((1.0 - u1[s]) / (1.0 + (a2 - 1.0) * u1[s]))
        hx[s] = math.sqrt(max(0.0, 1.0 - ct * ct)) * math.cos(2.0 * math.pi * u2[s])
        hz[s] = ct
        den = ct * ct * (a2 - 1.0) + 1.0
        dens[s] = a2 / (math.pi * den * den)
    C = cos_vals.shape[0]
    out = np.zeros((C, 2))
    for j in range(C):
        nv = cos_vals[j]
        vx = math.sqrt(1.0 - nv * nv)
        g1v = nv / (nv * (1.0 - kk) + kk)
        s0 = 0.0
        s1 = 0.0
        for s in range(n):
            vh = vx * hx[s] + nv * hz[s]
            lz = 2.0 * vh * hz[s] - nv
            if lz <= 0.0 or vh <= 0.0:
                continue
            D = dens[s]
            g1l = lz / (lz * (1.0 - kk) + kk)
            brdf_no_f = D * g1v * g1l / (4.0 * nv * lz)
            pdf = D * hz[s] / (4.0 * vh)
            contrib = brdf_no_f * lz / pdf
            fc = (1.0 - vh) ** 5
            s0 += (1.0 - fc) * contrib
            s1 += fc * contrib
        out[j, 0] = s0 / n
        out[j, 1] = s1 / n
    return out


def fg_oracle_table(resolution: tuple[int, int] = (64, 64), samples: int = 1_000_000, seed: int = 12345) -> np.ndarray:
    """(R, C, 2) reference table; one set of random numbers is shared per roughness row."""
    R, C = resolution
    rng = np.random.default_rng(seed)
    cos_vals = (np.arange(C) + 0.5) / C
    out = np.empty((R, C, 2))
    for i in range(R):
        u1, u2 = rng.random(samples), rng.random(samples)
        out[i] = _row((i + 0.5) / R, cos_vals, u1, u2)
    return out
