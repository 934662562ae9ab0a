"""Empirical vs population zero-one risk of 1D thresholds.

The empirical curve is a staircase full of local minima that the smooth
population curve does not have.

    python3 demos/zeroone_threshold_curves.py [n]
"""
import sys

import numpy as np

from hitsgld import zeroone as zo

n = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
xs, emp, pop = zo.fig1_tasks(n, np.random.default_rng(0))
sp = zo.spurious_minima(xs, emp, pop)
print(f"n = {n}: sup gap {np.abs(emp - pop).max():.4f}, {len(sp)} empirical-only local minima")
print(f"population minimum at x = {xs[np.argmin(pop)]:.4f}")
for x in xs[::1000]:
    i = np.searchsorted(xs, x)
    print(f"  x = {x:.3f}  empirical {emp[i]:.4f}  population {pop[i]:.4f}")
