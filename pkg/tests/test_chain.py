import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from hitsgld import chain
from hitsgld import cheeger as ch
from hitsgld import objective as ob
from hitsgld.sgld import TargetSet
from hitsgld.space import Box

K1 = Box([-1.0], [1.0])
DW = ob.double_well()


def tv_to_grid(samples, f_scaled, bins=50, cells=5000):
    gm = ch.build_grid_measure(K1, f_scaled, cells)
    edges = np.linspace(-1, 1, bins + 1)
    ref = np.histogram(gm.centers[:, 0], edges, weights=gm.weights)[0]
    emp = np.histogram(samples, edges)[0] / len(samples)
    return 0.5 * np.abs(ref - emp).sum()


def test_proposal_density_examples():
    cfg = chain.MhConfig.from_step(1 / (4 * math.pi))
    g = lambda X: np.full_like(X, 0.7)
    x = np.array([0.1])
    dens, mass = chain.proposal_density(x, x, g, cfg)
    assert mass == 0.5
    y = x - cfg.step * 0.7
    dens, mass = chain.proposal_density(x, y, g, cfg)
    assert dens == pytest.approx(0.5, rel=1e-14) and mass == 0.0


def test_proposal_density_integrates_to_half():
    cfg = chain.MhConfig.from_step(1e-2, xi=2.0)
    x = np.array([0.3])
    fn = lambda y: chain.proposal_density(x, np.array([y]), DW.grad, cfg)[0]
    centre = 0.3 - cfg.step * cfg.xi * DW.grad(x[None])[0, 0]
    val, _ = integrate.quad(fn, centre - 2, centre + 2, points=[centre], epsabs=1e-12)
    assert abs(val - 0.5) <= 1e-6


def test_acceptance_edge_cases():
    cfg = chain.MhConfig.from_step(1e-3)
    zero_g = lambda X: np.zeros_like(X)
    flat = lambda X: np.zeros(len(X))
    assert chain.acceptance_prob([0.0], [0.01], flat, zero_g, K1, cfg) == 1.0
    assert chain.acceptance_prob([0.0], [0.0], flat, zero_g, K1, cfg) == 0.0
    assert chain.acceptance_prob([0.99], [1.01], flat, zero_g, K1, cfg) == 0.0
    far = cfg.ball_bound(1) + 1e-3
    assert chain.acceptance_prob([0.0], [far], flat, zero_g, K1, cfg) == 0.0


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-1, 1), dy=st.floats(-0.2, 0.2), step=st.floats(1e-4, 1e-2),
       xi=st.floats(0.5, 20))
def test_acceptance_in_unit_interval(x, dy, step, xi):
    cfg = chain.MhConfig.from_step(step, xi=xi)
    a = chain.acceptance_prob([x], [x + dy], DW.value, DW.grad, K1, cfg)
    assert 0.0 <= a <= 1.0


def test_min_acceptance_bound():
    # (scale/2) x^2 on [-1, 1] has G = L = scale; pick G^2 + L = 10
    a = (-1 + math.sqrt(41)) / 2
    f = ob.quadratic(1, scale=a)
    cfg = chain.MhConfig.from_step(1e-4)
    X, Y = chain.sample_admissible_pairs(f.grad, K1, cfg, 10_000, np.random.default_rng(0))
    acc = np.exp(chain.log_acceptance(X, Y, f.value, f.grad, cfg))
    bound = math.exp(-33 * 1e-4 * 1 * 10)
    assert acc.min() >= bound
    # the looser reference value quoted for this configuration
    assert acc.min() >= math.exp(-0.33)


def test_flat_chain_is_uniform():
    flat = lambda X: np.zeros(len(X))
    zero_g = lambda X: np.zeros_like(X)
    cfg = chain.MhConfig.from_step(1e-3, seed=2)
    run = chain.mh_run(flat, zero_g, K1, cfg, k=1_000_000)
    assert K1.contains(run.samples).all()
    emp = np.histogram(run.samples[:, 0], np.linspace(-1, 1, 51))[0] / len(run)
    assert 0.5 * np.abs(emp - 1 / 50).sum() <= 0.05


def test_chain_deterministic_and_lazy():
    cfg = chain.MhConfig.from_step(1e-3, xi=5.0, seed=4)
    a = chain.mh_run(DW.value, DW.grad, K1, cfg, k=20_000)
    b = chain.mh_run(DW.value, DW.grad, K1, cfg, k=20_000)
    assert np.array_equal(a.samples, b.samples)
    assert not np.any(a.accepted & ~a.gaussian_branch)
    assert abs(a.gaussian_branch.mean() - 0.5) < 0.02


def test_aux_absorbing():
    U = TargetSet.ball("U", [-0.5], 0.1)
    cfg = chain.MhConfig.from_step(1e-3, seed=1)
    run = chain.aux_run(DW.value, DW.grad, K1, cfg, U, k=100, x0=[-0.45])
    assert run.hitting == 0 and np.all(run.samples == -0.45)
    run = chain.aux_run(DW.value, DW.grad, K1, cfg, U, k=200_000, x0=[0.5])
    assert run.hitting is not None and run.hitting > 0
    assert np.all(run.samples[run.hitting - 1:] == run.samples[-1])
    assert U.hit(run.samples[-1:])[0]


def test_kernel_checks():
    tilt = ob.double_well(tilt=0.1)
    step = chain.step_precondition(K1.default_h_max, 1, 0.02, math.inf,
                                   tilt.profile.grad_subexp, tilt.profile.smoothness)
    cfg = chain.MhConfig.from_step(0.5 * step)
    km = chain.build_kernel_1d(tilt.value, tilt.grad, K1, cfg, 500)
    assert np.abs(km.row_sums() - 1).max() <= 1e-10
    assert np.diag(km.P).min() >= 0.5
    assert km.detailed_balance_error() <= 1e-6
    gm = ch.build_grid_measure(K1, tilt.value, 500)
    assert 0.5 * np.abs(km.Q - gm.weights).sum() <= 0.02


def test_two_state_conductance():
    km = chain.KernelMatrix(np.array([0.0, 1.0]), 1.0, np.full((2, 2), 0.5),
                            np.array([0.5, 0.5]), 0.0, 0)
    assert chain.conductance_estimate(km, np.array([True, False])) == pytest.approx(0.5)
    assert chain.conductance_estimate(km, np.array([True, True]),
                                      family=[np.array([True, True])]) == 0.0
    with pytest.raises(ValueError, match="empty"):
        chain.conductance_estimate(km, np.array([True, True]), family=[])
    with pytest.raises(ValueError, match="inside V"):
        chain.conductance_estimate(km, np.array([True, False]), family=[np.array([True, True])])


def test_interval_conductance_matches_explicit_family():
    cfg = chain.MhConfig.from_step(1e-3, xi=2.0)
    km = chain.build_kernel_1d(DW.value, DW.grad, K1, cfg, 60)
    V = km.states > 0.1
    idx = np.flatnonzero(V)
    fam = []
    for a in idx:
        for b in idx[idx >= a]:
            m = np.zeros(60, bool)
            m[a:b + 1] = True
            fam.append(m)
    assert chain.conductance_estimate(km, V) == pytest.approx(
        chain.conductance_estimate(km, V, family=fam), rel=1e-9)


def test_formulas():
    assert chain.conductance_lower_bound(1e-4, 1, 0.0) == 0.0
    assert chain.conductance_lower_bound(4e-4, 1, 2.0) == pytest.approx(
        (1 - math.exp(-0.01)) / 192)
    assert chain.step_precondition(1.0, 2, 0.1, math.inf, 1.0, 1.0) == pytest.approx(1 / 400)
    assert chain.step_precondition(1.0, 1, 0.01, math.inf, 0.0, 1e-6) == pytest.approx(16e-4)
    assert chain.closeness_delta(1e-4, 1, 3.0, 1.0) == pytest.approx(math.exp(0.033) - 1)


def test_closeness_checks():
    U = TargetSet.ball("U", [-0.5], 0.1, rho=0.02)
    cfg = chain.MhConfig.from_step(1e-4)
    G, L = DW.profile.grad_subexp, DW.profile.smoothness
    rep = chain.closeness_report(DW.value, DW.grad, K1, cfg, U, G, L, n_pairs=10_000,
                                 n_states=10, n_paired=10_000, rng=np.random.default_rng(0))
    assert rep.holds and rep.n_checks > 0
    q = chain.quadrature_closeness(DW.value, DW.grad, K1, cfg, U, n_states=400)
    assert q["lower_holds"] and q["delta"] <= rep.delta_bound


def test_subsequence_ks():
    cfg = chain.MhConfig.from_step(1e-3, xi=5.0)
    res = chain.subsequence_ks(DW.value, DW.grad, K1, cfg, [0.3], 10_000,
                               np.random.default_rng(1))
    assert res.pvalue > 0.01


def test_chi_square_tails():
    rng = np.random.default_rng(0)
    rep = chain.chi_square_tail_check(4, 9 / 5, 1_000_000, rng)
    assert rep["holds"] and rep["bound"] == pytest.approx(math.exp(-7.2))
    assert rep["upper_threshold"] <= 36
    assert chain.chi_square_tail_check(1, 1.0, 1_000_000, rng)["holds"]
    small = chain.chi_square_tail_check(3, 1e-6, 1000, rng)
    assert small["bound"] == pytest.approx(1.0, abs=1e-5)
    with pytest.raises(ValueError):
        chain.chi_square_tail_check(0, 1.0, 10, rng)


def test_mh_config_validation():
    with pytest.raises(ValueError):
        chain.MhConfig(eta=0.0)
    cfg = chain.MhConfig.from_step(1e-3, xi=5.0)
    assert cfg.eta == pytest.approx(5e-3) and cfg.step == pytest.approx(1e-3)
    with pytest.raises(ValueError, match="outside"):
        chain.mh_run(DW.value, DW.grad, K1, cfg, k=1, x0=[3.0])
