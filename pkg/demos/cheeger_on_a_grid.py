"""Brute-force restricted Cheeger constants on a fine 1D grid.

Uniform measure first (known answers 2 and 4), then a Gibbs measure for the
double well at a few temperatures.

    python3 demos/cheeger_on_a_grid.py
"""
from hitsgld import cheeger, objective as ob
from hitsgld.space import Box

K = Box([0.0], [1.0])
gm = cheeger.build_grid_measure(K, lambda X: 0.0 * X[:, 0], 2000)
for lo, hi in [(0.0, 0.5), (0.25, 0.75)]:
    est = cheeger.cheeger_bruteforce(gm, cheeger.SetPredicate.interval(lo, hi))
    print(f"uniform, V = [{lo}, {hi}]: {est.value:.4f} (+- {est.residual:.1e}), argmin {est.argmins[-1]}")

dw = ob.double_well()
K = Box([-1.0], [1.0])
V = cheeger.SetPredicate.interval(0.0, 1.0)
for xi in (1.0, 5.0, 20.0):
    gm = cheeger.build_grid_measure(K, lambda X, xi=xi: xi * dw.value(X), 2000)
    est = cheeger.cheeger_bruteforce(gm, V)
    print(f"double well, xi = {xi:5.1f}, V = [0, 1]: {est.value:.4f}")
