"""Stage-1 geometry schedule sweep: offset delay and upsampling, scored on held-out frames."""
import argparse
import time

from avatarkit.config import SceneConfig, TrainConfig
from avatarkit.model import AvatarModel
from avatarkit.pbr import bake_fg_lut
from avatarkit.scene import generate_scene
from avatarkit.train import evaluate_model, train_stage1

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--iterations", type=int, default=600)
a = p.parse_args()

scene = generate_scene(SceneConfig(frames=16, resolution=64, render_samples=256))
lut = bake_fg_lut((64, 64), 4096)
print("delay upsample_at upsample seconds normal_cos mask_err psnr psnr_overlap")
for delay, frac, up in ((0.0, 0.5, True), (0.0, 0.5, False), (0.5, 0.75, True), (0.5, 0.75, False)):
    cfg = TrainConfig(stage1_iterations=a.iterations, geometry_delay=delay, upsample_fraction=frac, upsample=up,
                      log_every=0)
    model = AvatarModel.create(scene.rig, cfg)
    t0 = time.perf_counter()
    train_stage1(model, scene, cfg, lut)
    m = evaluate_model(model, scene, scene.test_frames(), model.neural_light(), lut)
    print(f"{delay:5.2f} {frac:11.2f} {up!s:8s} {time.perf_counter() - t0:7.0f} {m['normal_cos']:.4f} "
          f"{m['mask_err']:.4f} {m['psnr']:.2f} {m['psnr_overlap']:.2f}", flush=True)
