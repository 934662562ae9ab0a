"""Start SGLD and plain SGD inside a shallow spurious basin and see who gets out.

    python3 demos/escape_shallow_minimum.py
"""
import numpy as np

from hitsgld import objective as ob
from hitsgld.sgld import SgldConfig, TargetSet, sgd_run_seeds, sgld_run_seeds
from hitsgld.space import Box

f = ob.perturbed_double_well()
K = Box([-1.0], [1.0])

grid = np.linspace(-1, 1, 20_001)[:, None]
vals = f.value(grid)
x_glob = grid[np.argmin(vals), 0]
print(f"global minimum near x = {x_glob:+.4f}, f = {vals.min():.4f}")

# a local minimum on the wrong side of the barrier
right = grid[:, 0] > 0.2
x_loc = grid[right][np.argmin(vals[right]), 0]
print(f"start in the basin at x = {x_loc:+.4f}, f = {f.value(np.array([[x_loc]]))[0]:.4f}")

U = TargetSet.ball("global", [x_glob], 0.1)
cfg = SgldConfig(xi=20.0, eta=1e-4, k_max=200_000, eval_stride=100)
seeds = range(5)
for name, fn in [("sgld", sgld_run_seeds), ("sgd", sgd_run_seeds)]:
    out = fn(f.grad, f.value, K, cfg, seeds, [U], x0=[x_loc])
    hits = [tr.hitting["global"] for _, tr in out]
    print(f"{name:5s} first hit step per seed: {hits}")
