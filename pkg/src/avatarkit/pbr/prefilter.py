"""GGX pre-filtered environment levels (weight-normalised, n = v = r assumption)
and their lookup by (direction, roughness)."""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..envmap import EnvMap, bilinear_equirect, bilinear_equirect_grad, read_pfm, texel_directions, write_pfm
from ..nnkit import Tensor, ad
from .brdf import ggx_ndf
from .sampling import ggx_half_local, hammersley, to_world

DEFAULT_LEVELS = (0.04, 0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass
class PrefilteredEnv:
    roughness: np.ndarray          # (L,) increasing
    images: list[np.ndarray]       # L equirect images (H, W, 3)

    def __post_init__(self):
        self.roughness = np.asarray(self.roughness, dtype=np.float64)
        if len(self.roughness) < 2 or len(self.images) != len(self.roughness):
            raise ValueError("need at least two levels with one image each")
        if np.any(np.diff(self.roughness) <= 0):
            raise ValueError("roughness levels must be strictly increasing")

    def bracket(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Lower level index and blend weight toward the next level."""
        lv = self.roughness
        r = np.clip(np.asarray(r, dtype=np.float64), lv[0], lv[-1])
        i = np.clip(np.searchsorted(lv, r, side="right") - 1, 0, len(lv) - 2)
        return i, (r - lv[i]) / (lv[i + 1] - lv[i])

    def _all_levels(self, dirs: np.ndarray) -> np.ndarray:
        return np.stack([bilinear_equirect(img, dirs) for img in self.images])

    def lookup(self, dirs: np.ndarray, r) -> np.ndarray:
        dirs = np.asarray(dirs, dtype=np.float64)
        r = np.broadcast_to(np.asarray(r, dtype=np.float64), dirs.shape[:-1])
        i, t = self.bracket(r)
        vals = self._all_levels(dirs)
        lo = np.take_along_axis(vals, i[None, ..., None], axis=0)[0]
        hi = np.take_along_axis(vals, i[None, ..., None] + 1, axis=0)[0]
        return lo * (1.0 - t[..., None]) + hi * t[..., None]

    def lookup_tensor(self, dirs, r) -> Tensor:
        """Lookup differentiable in both the direction and the roughness."""
        dirs = ad.as_tensor(dirs)
        r = ad.as_tensor(r)
        rr = np.broadcast_to(r.data, dirs.shape[:-1])
        i, t = self.bracket(rr)
        both = [bilinear_equirect_grad(img, dirs.data) for img in self.images]
        vals = np.stack([v for v, _ in both])
        jacs = np.stack([j for _, j in both])
        lo = np.take_along_axis(vals, i[None, ..., None], axis=0)[0]
        hi = np.take_along_axis(vals, i[None, ..., None] + 1, axis=0)[0]
        jlo = np.take_along_axis(jacs, i[None, ..., None, None], axis=0)[0]
        jhi = np.take_along_axis(jacs, i[None, ..., None, None] + 1, axis=0)[0]
        inside = (rr > self.roughness[0]) & (rr < self.roughness[-1])
        slope = (hi - lo) / (self.roughness[i + 1] - self.roughness[i])[..., None] * inside[..., None]
        tt = t[..., None]
        out = lo * (1.0 - tt) + hi * tt
        jac = jlo * (1.0 - tt[..., None]) + jhi * tt[..., None]

        def bw(g):
            gd = np.einsum("...c,...ck->...k", g, jac) if dirs.requires_grad else None
            gr = ad._unbroadcast(np.sum(g * slope, axis=-1), r.shape) if r.requires_grad else None
            return gd, gr
        return Tensor.from_op(out, (dirs, r), bw, "prefiltered_lookup")


def _mip_lookup(mips: list[np.ndarray], dirs: np.ndarray, lod: float) -> np.ndarray:
    lod = float(np.clip(lod, 0.0, len(mips) - 1))
    lo = int(np.floor(lod))
    hi = min(lo + 1, len(mips) - 1)
    t = lod - lo
    out = bilinear_equirect(mips[lo], dirs)
    if t > 0 and hi != lo:
        out = out * (1.0 - t) + bilinear_equirect(mips[hi], dirs) * t
    return out


def prefilter_level(env: EnvMap, r: float, out_shape: tuple[int, int], samples: int,
                    mips: list[np.ndarray] | None = None, chunk: int = 256, lod_bias: float = 0.0) -> np.ndarray:
    """Weight-normalised GGX convolution of env at roughness r.

    The same Hammersley set is rotated to every output direction; each sample
    reads from the mip level whose texel footprint matches its solid angle.
    """
    mips = mips if mips is not None else env.mip_chain()
    H, W = env.shape
    u1, u2 = hammersley(samples)
    h = ggx_half_local(u1, u2, r)
    nh = h[:, 2]
    l_local = 2.0 * nh[:, None] * h - np.array([0.0, 0.0, 1.0])
    nl = l_local[:, 2]
    keep = nl > 0
    l_local, nl, nh = l_local[keep], nl[keep], nh[keep]
    pdf = ggx_ndf(nh, r) / 4.0                       # pdf of l when n = v: D nh / (4 vh), vh = nh
    omega_s = 1.0 / (samples * pdf)
    omega_p = 4.0 * np.pi / (H * W)
    lods = np.maximum(0.5 * np.log2(omega_s / omega_p) + lod_bias, 0.0)
    out_dirs = texel_directions(*out_shape).reshape(-1, 3)
    result = np.empty((len(out_dirs), 3))
    for s in range(0, len(out_dirs), chunk):
        n = out_dirs[s:s + chunk]
        world = to_world(l_local[None], n)           # (c, S, 3)
        acc = np.zeros((len(n), 3))
        for lod in np.unique(lods):
            sel = lods == lod
            vals = _mip_lookup(mips, world[:, sel], lod)
            acc += np.einsum("csk,s->ck", vals, nl[sel])
        result[s:s + chunk] = acc / nl.sum()
    return result.reshape(*out_shape, 3)


def prefilter_env(env: EnvMap, roughness_levels=DEFAULT_LEVELS, out_shape: tuple[int, int] = (32, 64),
                  samples: int = 2048) -> PrefilteredEnv:
    mips = env.mip_chain()
    images = [prefilter_level(env, float(r), out_shape, samples, mips) for r in roughness_levels]
    return PrefilteredEnv(np.asarray(roughness_levels, dtype=np.float64), images)


# -- cache directory -----------------------------------------------------------------

_NAME = re.compile(r"^mip_(\d+)_r([0-9.]+)\.pfm$")


def save_prefiltered(directory, pf: PrefilteredEnv) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, (r, img) in enumerate(zip(pf.roughness, pf.images)):
        write_pfm(d / f"mip_{i}_r{r:.3f}.pfm", img)


def load_prefiltered(directory) -> PrefilteredEnv:
    entries = []
    for p in Path(directory).iterdir():
        m = _NAME.match(p.name)
        if m:
            entries.append((int(m.group(1)), float(m.group(2)), p))
    if not entries:
        raise FileNotFoundError(f"no mip_<level>_r<roughness>.pfm files in {directory}")
    entries.sort()
    return PrefilteredEnv(np.array([e[1] for e in entries]), [read_pfm(e[2]) for e in entries])
