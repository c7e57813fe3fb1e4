"""Compare the baked FG lookup table against the independent 1e6-sample estimator."""
import argparse
import time

import numpy as np

from avatarkit.pbr import bake_fg_lut
from avatarkit.pbr.oracle import fg_oracle_table

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--samples", type=int, default=4096)
p.add_argument("--oracle-samples", type=int, default=1_000_000)
a = p.parse_args()

t0 = time.perf_counter()
err = np.abs(bake_fg_lut((64, 64), a.samples).table - fg_oracle_table((64, 64), a.oracle_samples))
print(f"max {err.max():.2e}  mean {err.mean():.2e}  worst cell {np.unravel_index(err.argmax(), err.shape)}  "
      f"{time.perf_counter() - t0:.1f} s")
