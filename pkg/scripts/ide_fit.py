"""Fit the 2x64 lighting MLP to a pre-filtered procedural environment."""
import argparse

import numpy as np

from avatarkit.envmap import procedural_env
from avatarkit.lightnn import fit_light, make_light_net
from avatarkit.pbr import prefilter_env

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--env", default="studio")
p.add_argument("--iterations", type=int, default=2000)
a = p.parse_args()

pf = prefilter_env(procedural_env(a.env, 64, 128))
rep = fit_light(make_light_net(np.random.default_rng(0), 64, 2), pf, iterations=a.iterations)
print(f"{a.env}: train loss {rep.train_loss:.3e}, held-out relative L2 {rep.heldout_rel_l2:.2%}")
