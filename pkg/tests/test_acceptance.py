"""End-to-end acceptance criteria.

Every shipped config is run once into a temporary directory. Each criterion
is then re-derived from the emitted CSV artifacts with its tolerance written
out here, not read back from the config, so a loosened config cannot turn a
criterion green.
"""
import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from hitsgld import cheeger, experiments as ex, objective as ob
from hitsgld.space import Ball

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(scope="session")
def run(tmp_path_factory):
    cache = {}

    def get(name):
        if name not in cache:
            raw = json.loads((CONFIGS / f"{name}.json").read_text())
            raw["output_dir"] = str(tmp_path_factory.mktemp(name))
            cfg = ex.validate_config(raw)
            ex.run_experiment(cfg)
            out = Path(cfg.output_dir)
            man = json.loads((out / "manifest.json").read_text())
            cache[name] = (out, man, cfg)
        return cache[name]
    return get


def rows(out, fname):
    with open(out / fname, newline="") as fh:
        return list(csv.DictReader(fh))


def checks(man):
    return {c["name"]: c for c in man["checks"]}


def runtime(man):
    return man["timings_seconds"]["total"]


def test_01_stationarity(run, criterion):
    out, man, cfg = run("stationarity")
    p = cfg.params
    assert (p["xi"], p["step"], p["k_steps"], p["bins"]) == (5.0, 1e-3, 1_000_000, 50)
    h = rows(out, "histogram.csv")
    assert len(h) == 50
    tv = 0.5 * sum(abs(float(r["empirical"]) - float(r["reference"])) for r in h)
    t = runtime(man)
    ok = tv <= 0.05 and t <= 120
    criterion(1, "stationarity", ok, f"TV {tv:.4f} <= 0.05, runtime {t:.1f}s <= 120s")
    assert ok


def test_02_escape_contrast(run, criterion):
    out, man, cfg = run("escape")
    p = cfg.params
    assert (p["eta"], p["k_max"], p["rho"]) == (1e-4, 1_000_000, 0.1)
    r = rows(out, "escape_runs.csv")
    sgld = [x for x in r if x["method"] == "sgld"]
    sgd = [x for x in r if x["method"] == "sgd"]
    assert len(sgld) == len(sgd) == 20
    hit = lambda xs: sum(x["hit_step"] != "" for x in xs)
    # the hit radius is around the population global minimum
    f = ob.perturbed_double_well()
    grid = np.linspace(-1, 1, 200_001)[:, None]
    x_glob = grid[np.argmin(f.value(grid)), 0]
    near = sum(abs(float(x["x_hat"]) - x_glob) <= 0.1 for x in sgld)
    n_sgld, n_sgd, t = hit(sgld), hit(sgd), runtime(man)
    ok = n_sgld >= 18 and near >= 18 and n_sgd == 0 and t <= 300
    criterion(2, "escape contrast", ok,
              f"SGLD {n_sgld}/20 >= 18, SGD {n_sgd}/20 == 0, xi {sgld[0]['xi']}, runtime {t:.1f}s <= 300s")
    assert ok


def test_03_smoothing_oracle(run, criterion):
    out, man, cfg = run("smoothing_checks")
    assert cfg.params["draws"] == 100_000
    unb = rows(out, "unbiasedness.csv")
    losses = {r["loss"] for r in unb}
    assert {"zeroone", "quadratic"} <= losses
    zmax = max(abs(float(r["zscore"])) for r in unb)
    curv = rows(out, "curvature.csv")
    curv_ok = all(float(r["max_curvature"]) <= float(r["bound"]) + 3 * float(r["se"])
                  for r in curv)
    t = runtime(man)
    ok = zmax <= 3.0 and curv_ok and t <= 60
    criterion(3, "smoothing oracle", ok,
              f"max |z| {zmax:.2f} <= 3, curvature within bound + CI {curv_ok}, runtime {t:.1f}s <= 60s")
    assert ok


def test_04_cheeger_bruteforce(run, criterion):
    out, man, _ = run("cheeger_table")
    tab = {r["case"]: r for r in rows(out, "cheeger_table.csv")}
    b = float(tab["uniform_boundary"]["estimate"])
    i = float(tab["uniform_interior"]["estimate"])
    pos = all(float(r["estimate"]) > 0 and float(r["inf_smallest_eps"]) >= float(r["positivity_bound"])
              for r in tab.values())
    ok = abs(b - 2) <= 0.2 and abs(i - 4) <= 0.4 and pos
    criterion(4, "cheeger brute force", ok,
              f"boundary {b:.4f} ~ 2, interior {i:.4f} ~ 4 (10%), positivity on {len(tab)} cases {pos}")
    assert ok


def test_05_field_lower_bound(run, criterion):
    out, man, _ = run("cheeger_table")
    tab = rows(out, "cheeger_table.csv")
    with_field = [r for r in tab if not math.isnan(float(r["field_lower_bound"]))]
    assert len(with_field) >= 3
    sound = all(float(r["field_lower_bound"])
                <= 1.1 * float(r["estimate"]) + float(r["residual"]) for r in with_field)
    p2 = checks(man)["quadratic_field_grid_inf"]
    ok = sound and p2["value"] >= p2["threshold"]
    criterion(5, "field lower bound soundness", ok,
              f"{len(with_field)} triples sound {sound}, grid inf {p2['value']:.4f} >= {p2['threshold']:.4f}")
    assert ok


def test_06_stability_sandwich(run, criterion):
    out, man, _ = run("cheeger_table")
    st = {r["case"]: r for r in rows(out, "stability.csv")}
    s = st["sinusoid"]
    nu, c1, c2, tol = (float(s[k]) for k in ("nu", "c1", "c2", "tolerance"))
    assert nu <= 0.1 + 1e-12
    sand = math.exp(-2 * nu) * c1 - tol <= c2 <= math.exp(2 * nu) * c1 + tol
    sh = st["shift"]
    eq = float(sh["c1"]) == pytest.approx(float(sh["c2"]), rel=1e-12, abs=0)
    ok = sand and eq and s["per_eps_holds"] == "True"
    criterion(6, "stability sandwich", ok,
              f"sinusoid {c2:.4f} in e^(+-2nu)*{c1:.4f} +- {tol:.4f}, shift equal {eq}")
    assert ok


def test_07_conductance(run, criterion):
    out, man, _ = run("conductance")
    r = rows(out, "conductance.csv")[0]
    step, step_max = float(r["step"]), float(r["step_max"])
    C = float(r["cheeger"])
    bound = (1 - math.exp(-0.25 * math.sqrt(step) * C)) / 192
    phi = float(r["conductance"])
    kern = (float(r["rows_dev"]) <= 1e-10 and float(r["lazy_min"]) >= 0.5
            and float(r["detailed_balance"]) <= 1e-6 and float(r["tv"]) <= 0.02)
    ok = 0 < step <= step_max and phi >= bound and kern
    criterion(7, "conductance vs cheeger", ok,
              f"Phi {phi:.3e} >= {bound:.3e}, step {step:.2e} <= {step_max:.2e}, kernel checks {kern}")
    assert ok


def test_08_closeness(run, criterion):
    out, man, cfg = run("conductance")
    assert cfg.params["closeness_pairs"] >= 10_000
    r = rows(out, "closeness.csv")[0]
    step = float(r["step"])
    assert step == 1e-4
    f = ob.double_well(tilt=0.1)
    G, L = f.profile.grad_subexp, f.profile.smoothness
    need = math.exp(-33 * step * 1 * (G * G + L))
    amin = float(r["min_acceptance"])
    viol = int(r["lower_violations"]) + int(r["upper_violations"])
    ok = amin >= need and viol == 0 and int(r["n_checks"]) > 0
    criterion(8, "closeness", ok,
              f"min acceptance {amin:.5f} >= {need:.5f}, delta violations {viol} over {r['n_checks']} checks")
    assert ok


def test_09_zeroone_learning(run, criterion):
    out, man, cfg = run("zeroone_learn")
    p = cfg.params
    assert (p["d"], p["c0"], p["n"], p["mc_samples"]) == (5, 0.5, 20_000, 1_000_000)
    r = rows(out, "learning.csv")
    assert len(r) == 10
    wins = sum(float(x["F_hat"]) <= float(x["F_star_hat"]) + 0.15 for x in r)
    t = runtime(man)
    ok = wins >= 8 and t <= 600
    criterion(9, "zero-one learning", ok, f"{wins}/10 >= 8 within 0.15, runtime {t:.1f}s <= 600s")
    assert ok


def test_10_disagreement_and_lipschitz(run, criterion):
    out, man, cfg = run("zeroone_learn")
    assert cfg.params["disagree_samples"] >= 1_000_000
    dis = rows(out, "disagreement.csv")
    assert len(dis) == 20
    derr = max(abs(float(x["arccos"]) - float(x["mc"])) for x in dis)
    lip = rows(out, "lipschitz.csv")
    assert len(lip) == 100
    lip_ok = all(abs(float(x["diff"])) <= 3 * float(x["distance"]) + 2 * float(x["se"]) for x in lip)
    ok = derr <= 0.01 and lip_ok
    criterion(10, "disagreement and lipschitz", ok,
              f"max |arccos - MC| {derr:.5f} <= 0.01, lipschitz on 100 pairs {lip_ok}")
    assert ok


def test_11_figure_one(run, criterion):
    out, man, cfg = run("fig1")
    assert cfg.params["n"] == 5000
    curves = rows(out, "fig1_curves.csv")
    by = {}
    for c in curves:
        by.setdefault(c["series"], []).append(float(c["value"]))
    gap = float(np.max(np.abs(np.array(by["empirical"]) - np.array(by["population"]))))
    n_sp = len(rows(out, "fig1_spurious_minima.csv"))
    ok = gap <= 0.05 and n_sp >= 5
    criterion(11, "figure-one stand-in", ok, f"sup gap {gap:.4f} <= 0.05, {n_sp} spurious minima >= 5")
    assert ok


def test_12_saddle_field(run, criterion):
    out, man, cfg = run("cheeger_table")
    conf, eps = cfg.params["saddle_conf"], cfg.params["saddle_eps"]
    f = ob.saddle_quartic(conf)
    probes = rows(out, "saddle_probes.csv")
    P = np.array([[float(x["x1"]), float(x["x2"])] for x in probes])
    div = np.array([float(x["divergence"]) for x in probes])
    in_region = bool(np.all(np.linalg.norm(f.grad(P), axis=1) < eps)
                     and np.all(np.linalg.eigvalsh(f.hess(P))[:, 0] <= -math.sqrt(eps)))
    # fresh samples, independent of the run
    prof = cheeger.SmoothnessProfile(G=1 + conf, L=2 + 6 * conf)
    disk = Ball([0.0, 0.0], 1.0)
    fld = cheeger.saddle_field(f, eps, prof, h_div=1e-4 * disk.diameter)
    X = disk.sample_uniform(np.random.default_rng(12345), 20_000)
    norm = max(float(np.linalg.norm(fld(X), axis=1).max()), checks(man)["saddle_norm"]["value"])
    ok = in_region and len(P) > 0 and bool(np.all(div < 0)) and norm <= 1.0
    criterion(12, "saddle field", ok,
              f"max norm {norm:.4f} <= 1, max div {div.max():.4f} < 0 on {len(P)} strict-saddle probes")
    assert ok
