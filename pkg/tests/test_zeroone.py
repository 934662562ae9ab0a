import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from hitsgld import zeroone as zo


def test_features_unit_and_isotropic():
    rng = np.random.default_rng(0)
    A = zo.sample_features(100_000, 2, rng)
    assert np.abs(np.linalg.norm(A, axis=1) - 1).max() <= 1e-12
    ang = np.mod(np.arctan2(A[:, 1], A[:, 0]), 2 * np.pi)
    assert stats.kstest(ang / (2 * np.pi), "uniform").statistic < 0.02
    B = zo.sample_features(100_000, 5, rng)
    u = np.ones(5) / math.sqrt(5)
    m2 = (B @ u) ** 2
    assert abs(m2.mean() - 0.2) <= 3 * m2.std() / math.sqrt(len(m2))


def test_label_generation():
    rng = np.random.default_rng(1)
    xs = np.array([0.6, 0.8, 0.0])
    clean = zo.MassartModel(xs, 0.5, kappa=lambda A: np.ones(len(A)))
    ds = zo.sample_dataset(clean, 5000, rng)
    assert np.array_equal(ds.labels, np.where(ds.features @ xs >= 0, 1.0, -1.0))
    # boundary points under the minimal model get coin-flip labels
    m = zo.MassartModel(np.eye(3)[0], 0.5)
    perp = np.tile([0.0, 0.6, -0.8], (20_000, 1))
    assert np.all(m.kappa(perp) == 0)
    frac = (zo.gen_labels(m, perp, rng).labels > 0).mean()
    assert abs(frac - 0.5) <= 4 * 0.5 / math.sqrt(20_000)


def test_binned_agreement_rate():
    rng = np.random.default_rng(2)
    m = zo.MassartModel(np.eye(3)[0], 0.8)
    ds = zo.sample_dataset(m, 400_000, rng)
    t = np.abs(ds.features[:, 0])
    agree = ds.labels == np.where(ds.features[:, 0] >= 0, 1.0, -1.0)
    edges = np.linspace(0, 1, 11)
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (t >= lo) & (t < hi)
        if sel.sum() < 1000:
            continue
        p = np.mean((1 + 0.8 * t[sel]) / 2)
        assert abs(agree[sel].mean() - p) <= 4 * math.sqrt(p * (1 - p) / sel.sum())


def test_model_validation():
    with pytest.raises(ValueError, match="unit"):
        zo.MassartModel([1.0, 1.0], 0.5)
    with pytest.raises(ValueError, match="kappa"):
        zo.MassartModel([1.0, 0.0], 0.5, kappa=lambda A: np.zeros(len(A)))
    with pytest.raises(ValueError):
        zo.MassartModel([1.0, 0.0], 0.0)
    with pytest.raises(ValueError, match="closed form"):
        zo.MassartModel([1.0, 0.0], 0.5, kappa=lambda A: np.ones(len(A))).optimal_risk()


def test_loss_values():
    assert zo.zero_one_loss([1.0, 0.0], [0.0, 1.0], 1) == 0.5
    assert zo.zero_one_loss([1.0, 0.0], [0.6, 0.8], 1) == 0.0
    assert zo.zero_one_loss([1.0, 0.0], [0.6, 0.8], -1) == 1.0
    assert zo.zero_one_loss([2.0, 0.0], [0.6, 0.8], -1) == 1.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), lam=st.floats(1e-3, 1e3))
def test_empirical_risk_scale_invariant(seed, lam):
    rng = np.random.default_rng(seed)
    m = zo.MassartModel.random(4, 0.5, rng)
    ds = zo.sample_dataset(m, 300, rng)
    x = rng.normal(size=4)
    assert zo.empirical_risk(lam * x, ds) == zo.empirical_risk(x, ds)


def test_empirical_risk_cases():
    rng = np.random.default_rng(3)
    xs = np.array([0.0, 1.0])
    one = zo.LabeledDataset(np.array([[0.6, 0.8]]), np.array([-1.0]))
    assert zo.empirical_risk(xs, one) == zo.zero_one_loss(xs, [0.6, 0.8], -1.0)
    clean = zo.MassartModel(xs, 0.5, kappa=lambda A: np.ones(len(A)))
    ds = zo.sample_dataset(clean, 1000, rng)
    assert zo.empirical_risk(xs, ds) == 0.0
    batch = zo.empirical_risk(np.array([xs, -xs]), ds)
    assert batch.tolist() == [0.0, 1.0]
    with pytest.raises(ValueError):
        zo.LabeledDataset(np.array([[2.0, 0.0]]), np.array([1.0]))


def test_population_risk_clean_extremes():
    rng = np.random.default_rng(4)
    xs = np.array([1.0, 0.0, 0.0])
    clean = zo.MassartModel(xs, 0.5, kappa=lambda A: np.ones(len(A)))
    assert zo.population_risk_mc(xs, clean, 10_000, rng)[0] == 0.0
    assert zo.population_risk_mc(-xs, clean, 10_000, rng)[0] == 1.0


def test_optimal_risk_closed_form_and_mc():
    # E|a_1| for uniform a on the sphere: a_1^2 ~ Beta(1/2, (d-1)/2)
    d = 5
    oracle = stats.beta(0.5, (d - 1) / 2).expect(np.sqrt)
    m = zo.MassartModel(np.eye(d)[0], 0.5)
    assert m.expected_abs_margin() == pytest.approx(oracle, rel=1e-10)
    assert m.optimal_risk() == pytest.approx(0.40625, abs=1e-12)
    est, se = zo.population_risk_mc(m.x_star, m, 10_000_000, np.random.default_rng(5))
    assert abs(est - 0.40625) <= 3 * se


def test_optimum_is_population_minimal():
    rng = np.random.default_rng(6)
    m = zo.MassartModel(np.eye(3)[0], 0.5)
    probes = zo.sample_features(50, 3, rng)
    F, se = zo.population_risk_mc(np.vstack([probes, m.x_star]), m, 200_000, rng)
    assert np.all(F[:-1] >= F[-1] - 3 * np.hypot(se[:-1], se[-1]))


def test_disagreement():
    x = np.array([1.0, 0.0, 0.0])
    assert zo.disagreement_probability(x, 2 * x) == 0.0
    assert zo.disagreement_probability(x, -x) == 1.0
    assert zo.disagreement_probability(x, [0.0, 1.0, 0.0]) == pytest.approx(0.5)
    rng = np.random.default_rng(7)
    for _ in range(5):
        a, b = rng.normal(size=(2, 3))
        freq, _ = zo.disagreement_mc(a, b, 1_000_000, rng)
        assert abs(freq - zo.disagreement_probability(a, b)) <= 0.01
    with pytest.raises(ValueError):
        zo.disagreement_probability(np.zeros(3), x)


def test_lipschitz_and_gap():
    rng = np.random.default_rng(8)
    m = zo.MassartModel(np.eye(3)[0], 0.5)
    K = zo.dilated_annulus(0.25, 3)
    assert (K.r_in, K.r_out) == (0.25, 1.25)
    pairs = K.sample_uniform(rng, 40).reshape(20, 2, 3)
    assert zo.lipschitz_check(m, pairs, 200_000, rng)["holds"]
    m2 = zo.MassartModel(np.eye(2)[0], 0.5)
    ds = zo.sample_dataset(m2, 5000, rng)
    gap = zo.uniform_gap(ds, m2, zo.Annulus(0.5, 1.0, 2).sample_uniform(rng, 200), 200_000, rng)
    assert gap["gap"] <= 0.05


def test_gap_single_sample():
    rng = np.random.default_rng(9)
    m = zo.MassartModel(np.eye(2)[0], 0.5)
    a = np.array([[0.6, 0.8]])
    ds = zo.LabeledDataset(a, np.array([1.0]))
    probe = np.array([[0.0, 1.0]])  # loss 0 on the sample
    gap = zo.uniform_gap(ds, m, probe, 400_000, rng)
    F, _ = zo.population_risk_mc(probe[0], m, 400_000, rng)
    assert gap["empirical"][0] == 0.0
    assert gap["gap"] == pytest.approx(F, abs=5e-3)


def threshold_risk_oracle(x, c0):
    def loss_prob(a):
        kap = c0 * abs(2 * a - 1)
        wrong = (a - x) * (a - 0.5) < 0
        return (1 + kap) / 2 if wrong else (1 - kap) / 2

    return integrate.quad(loss_prob, 0, 1, points=sorted({x, 0.5}), epsabs=1e-13)[0]


@pytest.mark.parametrize("x", [0.0, 0.1, 0.37, 0.5, 0.8, 1.0])
def test_threshold_population_closed_form(x):
    assert zo.threshold_population_risk(x, 0.5) == pytest.approx(
        threshold_risk_oracle(x, 0.5), abs=1e-10)


def test_threshold_empirical_matches_direct_count():
    rng = np.random.default_rng(10)
    a = rng.random(300)
    b = np.where(rng.random(300) < 0.5, 1.0, -1.0)
    xs = np.linspace(0, 1, 101)
    direct = [np.mean(b * (a - x) < 0) for x in xs]
    np.testing.assert_allclose(zo.threshold_empirical_risk(xs, a, b), direct)


def test_fig1_curves():
    xs, emp, pop = zo.fig1_tasks(5000, np.random.default_rng(0))
    assert len(xs) == 10_000
    assert np.abs(emp - pop).max() <= 0.05
    assert len(zo.spurious_minima(xs, emp, pop)) >= 5
    pm = zo.plateau_minima(pop)
    assert len(pm) == 1 and abs(xs[pm[0][0]] - 0.5) <= 1e-4
    # large n: curves coincide
    xs, emp, pop = zo.fig1_tasks(2_000_000, np.random.default_rng(1), grid=1000)
    assert np.abs(emp - pop).max() <= 3e-3


def test_plateau_minima():
    assert zo.plateau_minima([3, 1, 1, 2, 0, 5]) == [(1, 2), (4, 4)]
    assert zo.plateau_minima([1, 1, 1]) == []
    assert zo.plateau_minima([0, 1, 2]) == [(0, 0)]


def test_dataset_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    ds = zo.sample_dataset(zo.MassartModel(np.eye(3)[1], 0.5), 50, rng)
    p = tmp_path / "ds.csv"
    ds.to_csv(p)
    assert p.read_text().splitlines()[0] == "a_1,a_2,a_3,b"
    back = zo.LabeledDataset.from_csv(p)
    assert np.array_equal(back.features, ds.features) and np.array_equal(back.labels, ds.labels)
