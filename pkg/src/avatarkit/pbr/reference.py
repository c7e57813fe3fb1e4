"""Monte-Carlo integrator of the dichromatic reflectance model (direct lighting,
no visibility) used as the ground-truth renderer and as a correctness oracle."""
from __future__ import annotations

import numpy as np

from ..envmap import EnvMap
from .brdf import MaterialSample, fresnel_schlick, smith_g
from .sampling import (cosine_local, ggx_visible_local, smith_g1_exact, stratified_2d, tangent_frame,
                       to_world)


def reference_shade(n: np.ndarray, w_o: np.ndarray, mat: MaterialSample, F0, env: EnvMap,
                    samples: int = 256, seed: int = 0, pixel_ids: np.ndarray | None = None,
                    chunk: int = 256) -> np.ndarray:
    """Per-sample estimate of rho/pi * int L cos + k * int f_spec L cos.

    Diffuse uses cosine sampling, specular uses GGX visible-normal sampling. The
    random stream of each point is keyed by its pixel id, so results do not
    depend on chunking.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    N = len(n)
    pixel_ids = np.arange(N) if pixel_ids is None else np.asarray(pixel_ids)
    F0 = np.broadcast_to(np.asarray(F0, dtype=np.float64), (N,))
    out = np.zeros((N, 3))
    for s in range(0, N, chunk):
        sl = slice(s, s + chunk)
        nn, wo, ids = n[sl], w_o[sl], pixel_ids[sl].astype(np.uint64)
        nv = np.sum(nn * wo, axis=-1)
        front = nv > 0
        # diffuse
        u1, u2 = stratified_2d(seed, ids * np.uint64(2), samples)
        l_d = to_world(cosine_local(u1, u2), nn)
        diffuse = mat.rho[sl] * env.lookup(l_d).mean(axis=1)
        # specular
        u1, u2 = stratified_2d(seed, ids * np.uint64(2) + np.uint64(1), samples)
        t, b = tangent_frame(nn)
        v_loc = np.stack([np.sum(wo * t, -1), np.sum(wo * b, -1), nv], axis=-1)
        r = mat.r[sl][:, None]
        h = ggx_visible_local(v_loc[:, None, :], u1, u2, r)
        vh = np.sum(v_loc[:, None, :] * h, axis=-1)
        l_loc = 2.0 * vh[..., None] * h - v_loc[:, None, :]
        nl = l_loc[..., 2]
        ok = (nl > 0) & (vh > 0) & front[:, None]
        nv_c = np.maximum(nv, 1e-8)[:, None]
        w = np.where(ok, fresnel_schlick(np.clip(vh, 0, 1), F0[sl][:, None])
                     * smith_g(nv_c, np.where(ok, nl, 1.0), r) / smith_g1_exact(nv_c, r), 0.0)
        l_w = (l_loc[..., 0:1] * t[:, None] + l_loc[..., 1:2] * b[:, None] + l_loc[..., 2:3] * nn[:, None])
        spec = mat.k[sl][:, None] * np.mean(w[..., None] * env.lookup(l_w), axis=1)
        out[sl] = np.where(front[:, None], diffuse + spec, 0.0)
    return out


def sphere_gbuffer(res: int = 64, distance: float = 3.0, radius: float = 1.0, fov_deg: float = 45.0):
    """Analytic ray-sphere G-buffer: camera on +z looking at the origin (y up).

    Returns (normals (H, W, 3), view directions towards the camera, mask).
    """
    f = 0.5 * res / np.tan(np.deg2rad(fov_deg) / 2)
    c = (np.arange(res) + 0.5 - res / 2) / f
    xs, ys = np.meshgrid(c, -c)
    d = np.stack([xs, ys, -np.ones_like(xs)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.array([0.0, 0.0, distance])
    b = np.sum(d * o, axis=-1)
    disc = b * b - (distance ** 2 - radius ** 2)
    mask = disc > 0
    t = -b - np.sqrt(np.maximum(disc, 0.0))
    p = o + t[..., None] * d
    normals = np.where(mask[..., None], p / radius, 0.0)
    return normals, -d, mask


def reference_render_sphere(env: EnvMap, mat_rho, r: float, k: float, F0: float, res: int = 64,
                            samples: int = 256, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    normals, view, mask = sphere_gbuffer(res)
    n, v = normals[mask], view[mask]
    mat = MaterialSample.uniform(len(n), mat_rho, r, k)
    img = np.zeros((res, res, 3))
    img[mask] = reference_shade(n, v, mat, F0, env, samples, seed, np.flatnonzero(mask.ravel()))
    return img, mask
