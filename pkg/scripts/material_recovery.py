"""Recover albedo and roughness of a single-material sphere under its known pre-filtered light."""
import argparse

import numpy as np

from avatarkit.config import RegionMaterial, SceneConfig, TrainConfig
from avatarkit.experiments import material_recovery
from avatarkit.losses import LossWeights
from avatarkit.pbr import bake_fg_lut
from avatarkit.scene import generate_scene

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--iterations", type=int, default=800)
p.add_argument("--lr", type=float, default=1e-2)
p.add_argument("--final-factor", type=float, default=0.05)
p.add_argument("--prior-weight", type=float, default=0.0, help="weight of the roughness/specular priors")
a = p.parse_args()

gt = RegionMaterial((0.6, 0.3, 0.2), 0.4, 0.5)
scene = generate_scene(SceneConfig(shape="sphere", frames=8, resolution=64, render_samples=1024,
                                   texture_amplitude=0.0, skin=gt))
cfg = TrainConfig(stage1_iterations=a.iterations, lr_material=a.lr, lr_final_factor=a.final_factor,
                  weights=LossWeights(rough=a.prior_weight, spec=a.prior_weight), log_every=100)
out = material_recovery(scene, cfg, bake_fg_lut((64, 64), 4096))
print("albedo Linf", np.abs(out["rho"] - gt.rho).max(), "median", np.median(out["rho"], axis=0))
print("roughness max error", np.abs(out["r"] - gt.r).max(), "median", np.median(out["r"]))
print("specular median", np.median(out["k"]))
