"""Two-stage run on the synthetic head with the hash-from-scratch and no-upsampling ablations."""
import argparse
import json
import logging
from pathlib import Path

from avatarkit.config import SceneConfig, TrainConfig
from avatarkit.experiments import head_experiment
from avatarkit.metrics import write_metrics_csv
from avatarkit.pbr import bake_fg_lut

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--out", default="runs/head")
p.add_argument("--frames", type=int, default=16)
p.add_argument("--resolution", type=int, default=64)
p.add_argument("--stage1", type=int, default=600)
p.add_argument("--stage2", type=int, default=400)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--no-ablations", action="store_true")
a = p.parse_args()
logging.basicConfig(level=logging.INFO)

out = Path(a.out)
scene = SceneConfig(frames=a.frames, resolution=a.resolution, render_samples=256, seed=a.seed)
train = TrainConfig(stage1_iterations=a.stage1, stage2_iterations=a.stage2, seed=a.seed)
res = head_experiment(scene, train, bake_fg_lut((64, 64), 4096), out, ablations=not a.no_ablations)
write_metrics_csv(out / "summary.csv", [res])
print(json.dumps(res, indent=1))
