"""Per-pixel relative error of split-sum shading against the Monte-Carlo integrator on spheres."""
import argparse

import numpy as np

from avatarkit.envmap import procedural_env
from avatarkit.pbr import LutLight, bake_fg_lut, prefilter_env, reference_render_sphere, shade_splitsum_np, sphere_gbuffer

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--albedo", type=float, default=0.5)
p.add_argument("--res", type=int, default=32)
p.add_argument("--samples", type=int, default=512)
a = p.parse_args()

lut = bake_fg_lut((64, 64), 4096)
normals, view, mask = sphere_gbuffer(a.res)
n, v = normals[mask], view[mask]
N, rho = len(n), (a.albedo,) * 3
print("env      r    k  median    p95")
for kind in ("studio", "sky", "sunset"):
    env = procedural_env(kind, 64, 128)
    light = LutLight(prefilter_env(env))
    for r in (0.1, 0.3, 0.5, 1.0):
        for k in (0.0, 1.0):
            ref, _ = reference_render_sphere(env, rho, r, k, 0.047, res=a.res, samples=a.samples, seed=7)
            ss = shade_splitsum_np(np.tile(rho, (N, 1)), np.full(N, r), np.full(N, k), n, v, light, lut, 0.047)
            e = np.linalg.norm(ss - ref[mask], axis=-1) / np.maximum(np.linalg.norm(ref[mask], axis=-1), 1e-12)
            print(f"{kind:7s} {r:4.1f} {k:4.0f} {np.median(e):7.3f} {np.percentile(e, 95):6.3f}")
