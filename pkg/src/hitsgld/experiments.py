"""Config-driven experiments that bind the library modules together.

A config is a JSON object with keys ``experiment``, ``params``, ``seeds``
and ``output_dir``. Every experiment writes CSV artifacts plus
``manifest.json`` into ``output_dir`` and reports named checks; a run passes
when every check passes.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import chain, cheeger, objective, zeroone
from .sgld import SgldConfig, TargetSet, sgd_run_seeds, sgld_run_seeds
from .space import Ball, Box, space_from_dict

WORKERS_ENV = "HITSGLD_WORKERS"


class ConfigError(ValueError):
    pass


# name -> default value; the default's type fixes the accepted type
SCHEMAS: dict[str, dict] = {
    "stationarity": {
        "objective": {"name": "double_well", "params": {}},
        "space": {"kind": "box", "dim": 1, "params": {"lo": [-1.0], "hi": [1.0]}},
        "xi": 5.0, "step": 1e-3, "k_steps": 1_000_000, "bins": 50,
        "reference_cells": 5000, "tv_max": 0.05,
    },
    "escape": {
        "objective": {"name": "perturbed_double_well", "params": {}},
        "space": {"kind": "box", "dim": 1, "params": {"lo": [-1.0], "hi": [1.0]}},
        "eta": 1e-4, "k_max": 1_000_000, "eval_stride": 100, "rho": 0.1,
        "xi_ladder": [5.0, 10.0, 20.0, 40.0], "tune_seeds": list(range(1000, 1020)),
        "tune_k_max": 100_000, "tune_target": 0.9,
        "min_sgld_hits": 18, "max_sgd_hits": 0, "trace_seed_index": 0,
    },
    "smoothing_checks": {
        "draws": 100_000, "z_max": 3.0, "curvature_probes": 8, "curvature_samples": 100_000,
        "step_sigma": 0.2, "quadratic_sigma": 0.1, "zeroone_sigma": 0.2,
        "zeroone_n": 200, "zeroone_d": 2, "c0": 0.5,
    },
    "cheeger_table": {
        "resolution_1d": 2000, "resolution_2d": 301, "rel_tol": 0.10,
        "stability_nu": 0.1, "stability_freq": 20.0, "shift": 0.3,
        "saddle_conf": 2.0, "saddle_eps": 0.04, "saddle_samples": 5000, "saddle_probes": 200,
        "xi_ladder": [1.0, 2.0, 4.0, 8.0], "field_samples": 4000,
    },
    "conductance": {
        "objective": {"name": "double_well", "params": {"tilt": 0.1}},
        "xi": 1.0, "n_states": 500, "step_fraction": 0.5, "u_center": -0.5, "u_radius": 0.1,
        "rho": 0.02, "reference_cells": 20000, "tv_max": 0.02, "db_max": 1e-6,
        "closeness_step": 1e-4, "closeness_pairs": 10_000, "aux_steps": 200_000,
        "ks_samples": 10_000, "ks_point": 0.3, "ks_xi": 5.0, "ks_step": 1e-3,
        "ks_pmin": 0.01, "chi2_samples": 1_000_000,
    },
    "zeroone_learn": {
        "d": 5, "c0": 0.5, "n": 20000, "nu": 0.2, "lipschitz": 3.0, "rho_K": 0.25,
        "xi": 100.0, "eta": 1e-3, "k_max": 100_000, "eval_stride": 500,
        "mc_samples": 1_000_000, "margin": 0.15, "min_success": 8,
        "disagree_pairs": 20, "disagree_d": 3, "disagree_samples": 1_000_000, "disagree_tol": 0.01,
        "lipschitz_pairs": 100, "lipschitz_samples": 1_000_000,
        "gap_probes": 200, "gap_samples": 100_000,
    },
    "fig1": {
        "n": 5000, "grid": 10_000, "c0": 0.5, "gap_max": 0.05, "min_spurious": 5,
    },
}

DEFAULT_SEEDS = {
    "stationarity": [1], "escape": list(range(20)), "smoothing_checks": [0],
    "cheeger_table": [0], "conductance": list(range(20)), "zeroone_learn": list(range(10)),
    "fig1": [0],
}

TOP_KEYS = {"experiment", "params", "seeds", "output_dir"}
# coordinates rather than sizes; every other numeric parameter must be >= 0
SIGNED_KEYS = {"u_center", "ks_point"}


@dataclass
class ExperimentConfig:
    experiment: str
    params: dict
    seeds: list
    output_dir: str

    def canonical(self) -> str:
        return json.dumps({"experiment": self.experiment, "params": self.params,
                           "seeds": self.seeds}, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _check_type(key, default, value):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok and not math.isfinite(value):
            raise ConfigError(f"parameter {key!r} must be finite")
    elif isinstance(default, list):
        ok = isinstance(value, list)
    elif isinstance(default, dict):
        ok = isinstance(value, dict)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"parameter {key!r} must be of type {type(default).__name__}")


def validate_config(raw: dict, base_dir: str | os.PathLike = ".") -> ExperimentConfig:
    """Check a raw config mapping and fill defaults; raises :class:`ConfigError`."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    name = raw.get("experiment")
    if name not in SCHEMAS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(SCHEMAS)}")
    schema = SCHEMAS[name]
    given = raw.get("params", {})
    if not isinstance(given, dict):
        raise ConfigError("params must be an object")
    bad = set(given) - set(schema)
    if bad:
        raise ConfigError(f"unknown parameters for {name}: {sorted(bad)}")
    params = json.loads(json.dumps(schema))
    for k, v in given.items():
        _check_type(k, schema[k], v)
        params[k] = float(v) if isinstance(schema[k], float) else v
    for k, v in params.items():
        if k in SIGNED_KEYS:
            continue
        if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
            raise ConfigError(f"parameter {k!r} must be non-negative")
    if "objective" in params:
        try:
            objective.objective_from_dict(params["objective"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad objective block: {exc}") from exc
    if "space" in params:
        try:
            space_from_dict(params["space"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad space block: {exc}") from exc
    seeds = raw.get("seeds", DEFAULT_SEEDS[name])
    if (not isinstance(seeds, list) or not seeds
            or not all(isinstance(s, int) and not isinstance(s, bool) and 0 <= s < 2**64
                       for s in seeds)):
        raise ConfigError("seeds must be a non-empty list of 64-bit non-negative integers")
    out = raw.get("output_dir", f"runs/{name}")
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir must be a non-empty string")
    out_path = Path(out)
    if not out_path.is_absolute():
        out_path = Path(base_dir) / out_path
    return ExperimentConfig(name, params, list(seeds), os.path.normpath(out_path))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return validate_config(raw, path.parent)


# ---------------------------------------------------------------------------
# run bookkeeping


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    note: str = ""


@dataclass
class RunManifest:
    experiment: str
    config_hash: str
    output_dir: str
    artifacts: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.passed for c in self.checks)

    def check(self, name, value, threshold, passed, note=""):
        self.checks.append(Check(name, float(value), float(threshold), bool(passed), note))

    def write(self):
        data = {
            "experiment": self.experiment, "config_hash": self.config_hash,
            "status": "pass" if self.passed else "fail", "error": self.error,
            "artifacts": self.artifacts, "summary": self.summary,
            "checks": [c.__dict__ for c in self.checks],
            "timings_seconds": self.timings,
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        path = Path(self.output_dir) / "manifest.json"
        path.write_text(json.dumps(data, indent=2, default=_json_default) + "\n")
        return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def write_csv(man: RunManifest, name: str, header, rows):
    path = Path(man.output_dir) / name
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    man.artifacts.append(name)
    return path


def emit_plot_data(curves: dict, path, x=None):
    """Tidy CSV ``x, series, value`` for curves on a shared grid.

    ``curves`` maps series name to ``(x, y)`` pairs or to ``y`` arrays when
    ``x`` is given once.
    """
    if not curves:
        raise ValueError("no curves to write")
    items = []
    for name, c in curves.items():
        if x is not None:
            xs, ys = np.asarray(x), np.asarray(c)
        else:
            xs, ys = (np.asarray(v) for v in c)
        items.append((name, xs, ys))
    grid = items[0][1]
    for name, xs, ys in items:
        if len(xs) != len(grid) or not np.array_equal(xs, grid) or len(ys) != len(xs):
            raise ValueError(f"series {name!r} is not on the shared grid")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "series", "value"])
        for name, xs, ys in items:
            for a, b in zip(xs, ys):
                w.writerow([repr(float(a)), name, repr(float(b))])
    return Path(path)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}")
    return max(1, n)


def _pmap(fn, items):
    n = worker_count()
    if n == 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, *zip(*items)))


# ---------------------------------------------------------------------------
# experiments


def _stationarity_seed(params, seed):
    f = objective.objective_from_dict(params["objective"])
    K = space_from_dict(params["space"])
    cfg = chain.MhConfig.from_step(params["step"], xi=params["xi"], seed=seed)
    run = chain.mh_run(f.value, f.grad, K, cfg, params["k_steps"])
    return run.samples[:, 0], float(run.accepted[run.gaussian_branch].mean())


def run_stationarity(cfg: ExperimentConfig, man: RunManifest):
    p = cfg.params
    f = objective.objective_from_dict(p["objective"])
    K = space_from_dict(p["space"])
    if K.dim != 1:
        raise ConfigError("stationarity runs in 1D")
    xi = p["xi"]
    gm = cheeger.build_grid_measure(K, lambda X: xi * f.value(X), p["reference_cells"])
    lo, hi = cheeger._bounding_box(K)
    edges = np.linspace(lo[0], hi[0], p["bins"] + 1)
    ref = np.histogram(gm.centers[:, 0], edges, weights=gm.weights)[0]
    results = _pmap(_stationarity_seed, [(p, s) for s in cfg.seeds])
    rows = []
    for seed, (samples, acc) in zip(cfg.seeds, results):
        hist = np.histogram(samples, edges)[0] / len(samples)
        tv = 0.5 * float(np.abs(hist - ref).sum())
        man.summary.append({"seed": seed, "tv": tv, "acceptance": acc})
        man.check(f"tv_seed{seed}", tv, p["tv_max"], tv <= p["tv_max"])
        rows += [(seed, a, b, h, r) for a, b, h, r in zip(edges[:-1], edges[1:], hist, ref)]
    write_csv(man, "histogram.csv", ["seed", "bin_lo", "bin_hi", "empirical", "reference"], rows)


def _spurious_start(f, pop, K, n=200_001):
    lo, hi = cheeger._bounding_box(K)
    xs = np.linspace(lo[0], hi[0], n)[:, None]
    g = xs[np.argmin(pop.value(xs)), 0]
    v = f.value(xs)
    other = xs[:, 0] > 0 if g < 0 else xs[:, 0] < 0
    i = int(np.argmin(np.where(other, v, np.inf)))
    return float(g), float(xs[i, 0])


def run_escape(cfg: ExperimentConfig, man: RunManifest):
    p = cfg.params
    f = objective.objective_from_dict(p["objective"])
    K = space_from_dict(p["space"])
    pop = f.params.get("population", f)
    gmin, start = _spurious_start(f, pop, K)
    target = [TargetSet.ball("global", [gmin], 0.0, p["rho"])]

    tune_rows, chosen, best_frac = [], None, -1.0
    for xi in p["xi_ladder"]:
        c = SgldConfig(xi=xi, eta=p["eta"], k_max=p["tune_k_max"], eval_stride=p["eval_stride"])
        out = sgld_run_seeds(f.grad, f.value, K, c, p["tune_seeds"], target, x0=[start])
        frac = float(np.mean([tr.hitting["global"] is not None for _, tr in out]))
        tune_rows.append((xi, frac))
        # prefer the coldest temperature that still escapes reliably
        if frac >= p["tune_target"]:
            chosen = xi
        if chosen is None and frac > best_frac:
            best_frac, fallback = frac, xi
    if chosen is None:
        chosen = fallback
    write_csv(man, "xi_scan.csv", ["xi", "tuning_hit_fraction"], tune_rows)

    c = SgldConfig(xi=chosen, eta=p["eta"], k_max=p["k_max"], eval_stride=p["eval_stride"])
    sgld_out = sgld_run_seeds(f.grad, f.value, K, c, cfg.seeds, target, x0=[start])
    sgd_out = sgd_run_seeds(f.grad, f.value, K, c, cfg.seeds, target, x0=[start])
    rows = []
    for method, out in (("sgld", sgld_out), ("sgd", sgd_out)):
        for seed, (xh, tr) in zip(cfg.seeds, out):
            hit = tr.hitting["global"]
            rows.append((seed, method, chosen, hit, xh[0], tr.f_values[tr.best_index],
                         tr.accept_rate))
            man.summary.append({"seed": seed, "method": method, "hit_step": hit,
                                "x_hat": float(xh[0])})
    write_csv(man, "escape_runs.csv",
              ["seed", "method", "xi", "hit_step", "x_hat", "f_x_hat", "accept_rate"], rows)
    idx = p["trace_seed_index"]
    if 0 <= idx < len(cfg.seeds):
        for method, out in (("sgld", sgld_out), ("sgd", sgd_out)):
            tr = out[idx][1]
            tr.to_csv(Path(man.output_dir) / f"trace_{method}.csv")
            man.artifacts.append(f"trace_{method}.csv")
    sgld_hits = sum(tr.hitting["global"] is not None for _, tr in sgld_out)
    sgd_hits = sum(tr.hitting["global"] is not None for _, tr in sgd_out)
    man.summary.append({"aggregate": True, "xi": chosen, "start": start, "global_min": gmin,
                        "sgld_escape_fraction": sgld_hits / len(cfg.seeds),
                        "sgd_escape_fraction": sgd_hits / len(cfg.seeds)})
    man.check("sgld_hits", sgld_hits, p["min_sgld_hits"], sgld_hits >= p["min_sgld_hits"])
    man.check("sgd_hits", sgd_hits, p["max_sgd_hits"], sgd_hits <= p["max_sgd_hits"])


def run_smoothing_checks(cfg: ExperimentConfig, man: RunManifest):
    p = cfg.params
    rng = np.random.default_rng(cfg.seeds[0])
    N = p["draws"]
    model = zeroone.MassartModel(np.eye(p["zeroone_d"])[0], p["c0"])
    ds = zeroone.sample_dataset(model, p["zeroone_n"], rng)
    cases = [
        ("step", objective.SmoothedObjective(objective.step_loss(), p["step_sigma"]),
         [np.array([0.05]), np.array([-0.1])]),
        ("quadratic", objective.SmoothedObjective(objective.quadratic(2), p["quadratic_sigma"]),
         [np.array([0.3, -0.2]), np.array([-0.5, 0.1])]),
        ("zeroone", objective.SmoothedObjective(zeroone.zero_one_sampler(ds), p["zeroone_sigma"]),
         [np.array([0.6, 0.3]), np.array([0.1, -0.7])]),
    ]
    rows, crows, srows = [], [], []
    for name, s, points in cases:
        for j, x in enumerate(points):
            r = objective.check_unbiased(s, x, N, rng)
            for i in range(s.dim):
                rows.append((name, j, i, r["grad_mean"][i], r["fd_mean"][i],
                             r["combined_se"][i], r["zscore"][i]))
            z = float(r["zscore"].max())
            man.check(f"unbiased_{name}_{j}", z, p["z_max"], z <= p["z_max"])
            for e in objective.check_subexponential(s, x, N, rng):
                ok = e["mean"] - 3 * e["se"] <= e["bound"]
                srows.append((name, j, e["fraction"], e["mean"], e["se"], e["bound"]))
                man.check(f"subexp_{name}_{j}_{e['fraction']}", e["mean"], e["bound"], ok)
        probes = (s.sigma * 2) * (rng.random((p["curvature_probes"], s.dim)) - 0.5) + points[0]
        cv = objective.verify_smoothness_constant(s, probes, p["curvature_samples"], rng)
        crows.append((name, s.sigma, cv["max_curvature"], cv["max_curvature_se"], cv["bound"]))
        man.check(f"curvature_{name}", cv["max_curvature"], cv["bound"], not cv["violated"])
    write_csv(man, "unbiasedness.csv",
              ["loss", "point", "coord", "grad_mean", "fd_mean", "combined_se", "zscore"], rows)
    write_csv(man, "subexponential.csv",
              ["loss", "point", "fraction", "mean", "se", "bound"], srows)
    write_csv(man, "curvature.csv", ["loss", "sigma", "max_curvature", "se", "bound"], crows)


def cheeger_cases(p):
    """The shipped ``(objective, space, V, field)`` cases as dictionaries."""
    zero = lambda X: np.zeros(len(X))
    box1 = Box([0.0], [1.0])
    disk = Ball([0.0, 0.0], 1.0)
    dw = objective.double_well()
    q = objective.quadratic(2)
    sad = objective.saddle_quartic(p["saddle_conf"])
    boxm = Box([-1.0], [1.0])
    eps_q = 0.5
    prof_q = cheeger.SmoothnessProfile(G=1.0, L=2.0)
    xi_q = 2 * prof_q.L / eps_q**2
    conf = p["saddle_conf"]
    # gradient bound on the square, attained at the corners
    prof_s = cheeger.SmoothnessProfile(G=math.sqrt(2) * (1 + conf), L=2 + 6 * conf)
    minima = np.array([[0.0, 1 / math.sqrt(conf)], [0.0, -1 / math.sqrt(conf)]])

    def slope_field():
        return cheeger.VectorField(lambda X: np.sin(np.pi * X / 2), 1, 1e-3,
                                   lambda X: (np.pi / 2) * np.cos(np.pi * X[:, 0] / 2),
                                   name="sin(pi x/2)")

    return [
        {"name": "uniform_boundary", "space": box1, "f": zero, "xi": 1.0,
         "V": cheeger.SetPredicate.interval(0.0, 0.5), "expected": 2.0},
        {"name": "uniform_interior", "space": box1, "f": zero, "xi": 1.0,
         "V": cheeger.SetPredicate.interval(0.25, 0.75), "expected": 4.0},
        {"name": "linear_slope", "space": box1, "f": lambda X: 3.0 * X[:, 0], "xi": 1.0,
         "grad": lambda X: np.full_like(X, 3.0),
         "V": cheeger.SetPredicate.interval(0.5, 1.0), "field": slope_field()},
        {"name": "double_well", "space": boxm, "f": dw.value, "xi": 1.0, "grad": dw.grad,
         "V": cheeger.SetPredicate.ball([-0.5], 0.1).complement(),
         "field": cheeger.gradient_field(dw, cheeger.SmoothnessProfile(
             G=dw.profile.grad_subexp, L=dw.profile.smoothness))},
        {"name": "quadratic_disk", "space": disk, "f": q.value, "xi": xi_q, "grad": q.grad,
         "V": cheeger.SetPredicate("grad>=eps",
                                   lambda X: np.einsum("ij,ij->i", q.grad(X), q.grad(X)) >= eps_q**2),
         "field": cheeger.gradient_field(q, prof_q), "quadratic_field": (eps_q, prof_q)},
        {"name": "saddle_box", "space": Box([-1.0, -1.0], [1.0, 1.0]), "f": sad.value, "xi": 1.0,
         "grad": sad.grad,
         "V": cheeger.SetPredicate("away_from_minima",
                                   lambda X: np.min(np.linalg.norm(X[:, None, :] - minima, axis=2),
                                                    axis=1) >= 0.25),
         "field": cheeger.gradient_field(sad, prof_s)},
    ]


def run_cheeger_table(cfg: ExperimentConfig, man: RunManifest):
    p = cfg.params
    rng = np.random.default_rng(cfg.seeds[0])
    rows, eps_rows = [], []
    for case in cheeger_cases(p):
        K = case["space"]
        res = p["resolution_1d"] if K.dim == 1 else p["resolution_2d"]
        xi = case["xi"]
        fxi = (lambda f, xi: (lambda X: xi * np.asarray(f(X))))(case["f"], xi)
        gm = cheeger.build_grid_measure(K, fxi, res)
        est = cheeger.cheeger_bruteforce(gm, case["V"])
        pos = cheeger.positivity_bound(gm, case["V"], est.epsilons[-1])
        lower = float("nan")
        if "field" in case:
            Vm = gm.mask(case["V"])
            pts = gm.centers[Vm]
            if len(pts) > p["field_samples"]:
                pts = pts[rng.choice(len(pts), p["field_samples"], replace=False)]
            lower = cheeger.vectorfield_lower_bound(case["field"], case["grad"], xi, pts, K)
            tol = p["rel_tol"] * est.value + est.residual
            man.check(f"field_bound_{case['name']}", lower, est.value + tol, lower <= est.value + tol)
        if "quadratic_field" in case:
            eps, prof = case["quadratic_field"]
            Vm = gm.mask(case["V"])
            vals = cheeger.vectorfield_values(case["field"], case["grad"], xi, gm.centers[Vm], K)
            need = xi * eps**2 / (2 * prof.G)
            man.check("quadratic_field_grid_inf", float(vals.min()), need, bool(vals.min() >= need))
        if "expected" in case:
            rel = abs(est.value - case["expected"]) / case["expected"]
            man.check(f"value_{case['name']}", est.value, case["expected"], rel <= p["rel_tol"])
        man.check(f"positive_{case['name']}", est.value, pos,
                  est.value > 0 and min(est.value, est.infima[-1]) >= pos)
        rows.append((case["name"], K.dim, est.value, est.residual, est.infima[-1], pos, lower,
                     est.argmins[-1]))
        eps_rows += [(case["name"], r["epsilon"], r["inf_ratio"], r["argmin"]) for r in est.rows()]

    # stability sandwich on the double well
    dw = objective.double_well()
    K = Box([-1.0], [1.0])
    V = cheeger.SetPredicate.interval(0.0, 1.0)
    gm1 = cheeger.build_grid_measure(K, dw.value, p["resolution_1d"])
    nu, fr = p["stability_nu"], p["stability_freq"]
    gm2 = cheeger.build_grid_measure(K, lambda X: dw.value(X) + nu * np.sin(fr * X[:, 0]),
                                     p["resolution_1d"])
    gm3 = cheeger.build_grid_measure(K, lambda X: dw.value(X) + p["shift"], p["resolution_1d"])
    srows = []
    for label, other in (("sinusoid", gm2), ("shift", gm3)):
        st = cheeger.stability_check(gm1, other, V)
        srows.append((label, st["nu"], st["c1"], st["c2"], st["lower"], st["upper"],
                      st["tolerance"], st["per_eps_holds"]))
        man.check(f"stability_{label}", st["c1"], st["upper"], st["holds"])
        if label == "shift":
            c1, c2 = st["estimates"]
            eq = bool(np.allclose(c1.infima, c2.infima, rtol=1e-12, atol=0))
            man.check("stability_shift_equal", float(np.max(np.abs(c1.infima - c2.infima))),
                      0.0, eq, "equal up to floating-point rounding")

    # convex objective: mass ratio and monotonicity in xi
    G, eps, d = 1.0, 0.25, 2
    xi_c = cheeger.convex_xi_threshold(d, G, eps)
    norm = lambda X: np.linalg.norm(X, axis=1)
    disk = Ball([0.0, 0.0], 1.0)
    U = cheeger.SetPredicate("eps_optimal", lambda X: norm(X) <= eps)
    gmc = cheeger.build_grid_measure(disk, lambda X: xi_c * norm(X), p["resolution_2d"])
    ratio = cheeger.convex_mass_ratio(gmc, U)
    man.check("convex_mass_ratio", ratio, 0.5, ratio <= 0.5)
    mono = []
    for xi in p["xi_ladder"]:
        g = cheeger.build_grid_measure(disk, lambda X, xi=xi: xi * norm(X), p["resolution_2d"])
        mono.append(cheeger.cheeger_bruteforce(g, U.complement()).value)
    man.check("convex_monotone", float(np.min(np.diff(mono))), 0.0,
              bool(np.all(np.diff(mono) >= 0)), "nondecreasing over the xi ladder")

    # saddle field
    conf, seps = p["saddle_conf"], p["saddle_eps"]
    sad = objective.saddle_quartic(conf)
    prof = cheeger.SmoothnessProfile(G=1 + conf, L=2 + 6 * conf)
    fld = cheeger.saddle_field(sad, seps, prof, h_div=1e-4 * disk.diameter)
    X = disk.sample_uniform(rng, p["saddle_samples"])
    max_norm = float(np.linalg.norm(fld(X), axis=1).max())
    man.check("saddle_norm", max_norm, 1.0, max_norm <= 1.0)
    probes = []
    while len(probes) < p["saddle_probes"]:
        P = rng.uniform(-0.1, 0.1, (4000, 2))
        gn = np.linalg.norm(sad.grad(P), axis=1)
        lam = np.linalg.eigvalsh(sad.hess(P))[:, 0]
        probes.extend(P[(gn < seps) & (lam <= -math.sqrt(seps))])
    probes = np.array(probes[:p["saddle_probes"]])
    div = fld.div(probes)
    man.check("saddle_divergence", float(div.max()), 0.0, bool(np.all(div < 0)))

    write_csv(man, "cheeger_table.csv",
              ["case", "dim", "estimate", "residual", "inf_smallest_eps", "positivity_bound",
               "field_lower_bound", "argmin"], rows)
    write_csv(man, "cheeger_eps.csv", ["case", "epsilon", "inf_ratio", "argmin"], eps_rows)
    write_csv(man, "stability.csv", ["case", "nu", "c1", "c2", "lower", "upper", "tolerance",
                                     "per_eps_holds"], srows)
    write_csv(man, "convex.csv", ["xi", "cheeger_estimate"], list(zip(p["xi_ladder"], mono)))
    write_csv(man, "saddle_probes.csv", ["x1", "x2", "divergence"],
              [(a, b, c) for (a, b), c in zip(probes, div)])
    man.summary.append({"convex_xi": xi_c, "convex_mass_ratio": ratio,
                        "saddle_max_norm": max_norm, "saddle_max_div": float(div.max())})


def _aux_seed(params, seed):
    f = objective.objective_from_dict(params["objective"])
    K = Box([-1.0], [1.0])
    cfg = chain.MhConfig.from_step(params["closeness_step"], xi=params["xi"], seed=seed)
    U = TargetSet.ball("U", [params["u_center"]], 0.0, params["u_radius"])
    return chain.aux_run(f.value, f.grad, K, cfg, U, params["aux_steps"]).hitting


def run_conductance(cfg: ExperimentConfig, man: RunManifest):
    p = cfg.params
    f = objective.objective_from_dict(p["objective"])
    K = Box([-1.0], [1.0])
    xi = p["xi"]
    fx = lambda X: xi * f.value(X)
    G = xi * f.profile.grad_subexp
    L = xi * f.profile.smoothness
    step_max = chain.step_precondition(K.default_h_max, 1, p["rho"], math.inf, G, L)
    step = p["step_fraction"] * step_max
    mc = chain.MhConfig.from_step(step, xi=xi, seed=cfg.seeds[0])
    km = chain.build_kernel_1d(f.value, f.grad, K, mc, p["n_states"])
    rows_dev = float(np.abs(km.row_sums() - 1).max())
    lazy = float(np.diag(km.P).min())
    db = km.detailed_balance_error()
    ref = cheeger.build_grid_measure(K, fx, p["reference_cells"])
    group = p["reference_cells"] // p["n_states"]
    tv = 0.5 * float(np.abs(ref.weights.reshape(p["n_states"], group).sum(1) - km.Q).sum())
    man.check("rows_stochastic", rows_dev, 1e-10, rows_dev <= 1e-10)
    man.check("lazy", lazy, 0.5, lazy >= 0.5)
    man.check("detailed_balance", db, p["db_max"], db <= p["db_max"])
    man.check("stationary_tv", tv, p["tv_max"], tv <= p["tv_max"])

    U = cheeger.SetPredicate.ball([p["u_center"]], p["u_radius"])
    V = U.complement()
    phi = chain.conductance_estimate(km, V)
    gm = cheeger.build_grid_measure(K, fx, 2000)
    V_rho = gm.dilate(gm.mask(V), p["rho"])
    C = cheeger.cheeger_bruteforce(gm, V_rho)
    bound = chain.conductance_lower_bound(step, 1, C.value)
    man.check("conductance_vs_cheeger", phi, bound, phi >= bound)
    km.to_csv(Path(man.output_dir) / "kernel_stationary.csv")
    man.artifacts.append("kernel_stationary.csv")

    # closeness of the auxiliary chain
    cstep = p["closeness_step"]
    ccfg = chain.MhConfig.from_step(cstep, xi=xi)
    Ut = TargetSet.ball("U", [p["u_center"]], 0.0, p["u_radius"])
    rng = np.random.default_rng(cfg.seeds[0])
    rep = chain.closeness_report(f.value, f.grad, K, ccfg, Ut, G, L, p["closeness_pairs"], rng=rng)
    quad = chain.quadrature_closeness(f.value, f.grad, K, ccfg, Ut)
    man.check("min_acceptance", rep.min_acceptance, rep.acceptance_bound,
              rep.min_acceptance >= rep.acceptance_bound)
    man.check("closeness_lower", rep.lower_violations, 0, rep.lower_violations == 0
              and quad["lower_holds"])
    man.check("closeness_upper", rep.upper_violations, 0, rep.upper_violations == 0
              and quad["delta"] <= rep.delta_bound)

    hits = _pmap(_aux_seed, [(p, s) for s in cfg.seeds])
    n_hit = sum(h is not None for h in hits)
    man.check("aux_hitting_finite", n_hit, len(cfg.seeds), n_hit == len(cfg.seeds))

    kscfg = chain.MhConfig.from_step(p["ks_step"], xi=p["ks_xi"])
    ks = chain.subsequence_ks(f.value, f.grad, K, kscfg, [p["ks_point"]], p["ks_samples"], rng)
    man.check("subsequence_ks", float(ks.pvalue), p["ks_pmin"], ks.pvalue > p["ks_pmin"])

    chi_rows = []
    for d, xp in ((4, 9 / 5), (1, 1.0)):
        r = chain.chi_square_tail_check(d, xp, p["chi2_samples"], rng)
        chi_rows.append((d, xp, r["upper_tail"], r["lower_tail"], r["bound"], r["ci"]))
        man.check(f"chi2_d{d}", max(r["upper_tail"], r["lower_tail"]), r["bound"] + r["ci"],
                  r["holds"])

    write_csv(man, "conductance.csv",
              ["step", "step_max", "rows_dev", "lazy_min", "detailed_balance", "tv",
               "conductance", "cheeger", "cheeger_residual", "bound"],
              [(step, step_max, rows_dev, lazy, db, tv, phi, C.value, C.residual, bound)])
    write_csv(man, "closeness.csv",
              ["step", "min_acceptance", "acceptance_bound", "delta_paired", "delta_quadrature",
               "delta_bound", "lower_violations", "upper_violations", "n_checks"],
              [(cstep, rep.min_acceptance, rep.acceptance_bound, rep.delta_empirical,
                quad["delta"], rep.delta_bound, rep.lower_violations, rep.upper_violations,
                rep.n_checks)])
    write_csv(man, "aux_hitting.csv", ["seed", "hitting_step"], list(zip(cfg.seeds, hits)))
    write_csv(man, "chi_square.csv", ["d", "x", "upper_tail", "lower_tail", "bound", "ci"],
              chi_rows)
    man.summary.append({"step": step, "conductance": phi, "cheeger": C.value, "bound": bound,
                        "ks_pvalue": float(ks.pvalue)})


def run_zeroone_learn(cfg: ExperimentConfig, man: RunManifest):
    p = cfg.params
    d = p["d"]
    data_rng = np.random.default_rng(cfg.seeds[0] + 7919)
    model = zeroone.MassartModel(np.eye(d)[0], p["c0"])
    ds = zeroone.sample_dataset(model, p["n"], data_rng)
    sigma = objective.erm_sigma(p["nu"], p["lipschitz"], 1.0, p["rho_K"])
    s = objective.SmoothedObjective(zeroone.zero_one_sampler(ds), sigma)
    K = zeroone.Annulus(0.5, 1.0, d)
    scfg = SgldConfig(xi=p["xi"], eta=p["eta"], k_max=p["k_max"], eval_stride=p["eval_stride"])
    out = sgld_run_seeds(s.oracle(), lambda X: zeroone.empirical_risk(X, ds), K, scfg, cfg.seeds)
    xh = np.array([x for x, _ in out])
    mc_rng = np.random.default_rng(cfg.seeds[0] + 104729)
    F_hat, F_se = zeroone.population_risk_mc(np.vstack([xh, model.x_star]), model,
                                             p["mc_samples"], mc_rng)
    F_star = float(F_hat[-1])
    rows, ok = [], 0
    for seed, (x, tr), Fx, se in zip(cfg.seeds, out, F_hat[:-1], F_se[:-1]):
        success = bool(Fx <= F_star + p["margin"])
        ok += success
        rows.append((seed, Fx, se, F_star, Fx - F_star, tr.f_values[tr.best_index],
                     tr.accept_rate, success))
        man.summary.append({"seed": seed, "F_hat": float(Fx), "excess": float(Fx - F_star)})
    man.check("learning_success", ok, p["min_success"], ok >= p["min_success"])
    write_csv(man, "learning.csv", ["seed", "F_hat", "F_se", "F_star_hat", "excess",
                                    "empirical_risk", "accept_rate", "success"], rows)

    # disagreement formula
    rng = np.random.default_rng(cfg.seeds[0] + 31)
    drows, worst = [], 0.0
    for _ in range(p["disagree_pairs"]):
        x, y = rng.standard_normal((2, p["disagree_d"]))
        exact = zeroone.disagreement_probability(x, y)
        freq, se = zeroone.disagreement_mc(x, y, p["disagree_samples"], rng)
        worst = max(worst, abs(exact - freq))
        drows.append((*x, *y, exact, freq, se))
    man.check("disagreement", worst, p["disagree_tol"], worst <= p["disagree_tol"])
    dd = p["disagree_d"]
    write_csv(man, "disagreement.csv", [f"x_{i + 1}" for i in range(dd)]
              + [f"y_{i + 1}" for i in range(dd)] + ["arccos", "mc", "mc_se"], drows)

    # Lipschitz spot check on the dilated annulus
    Kbar = zeroone.dilated_annulus(p["rho_K"], d)
    P = Kbar.sample_uniform(rng, 2 * p["lipschitz_pairs"]).reshape(p["lipschitz_pairs"], 2, d)
    lip = zeroone.lipschitz_check(model, P, p["lipschitz_samples"], rng, p["lipschitz"])
    man.check("lipschitz", lip["min_slack"], 0.0, lip["holds"])
    write_csv(man, "lipschitz.csv", ["pair", "distance", "diff", "se"],
              [(i, a, b, c) for i, (a, b, c) in enumerate(zip(lip["dist"], lip["diff"], lip["se"]))])

    gap = zeroone.uniform_gap(ds, model, Kbar.sample_uniform(rng, p["gap_probes"]),
                              p["gap_samples"], rng)
    man.summary.append({"sigma": sigma, "F_star_hat": F_star, "uniform_gap": gap["gap"],
                        "gap_reference": gap["reference"], "disagreement_max_error": worst})


def run_fig1(cfg: ExperimentConfig, man: RunManifest):
    p = cfg.params
    rng = np.random.default_rng(cfg.seeds[0])
    xs, emp, pop = zeroone.fig1_tasks(p["n"], rng, p["grid"], p["c0"])
    gap = float(np.abs(emp - pop).max())
    spur = zeroone.spurious_minima(xs, emp, pop)
    emit_plot_data({"empirical": emp, "population": pop}, Path(man.output_dir) / "fig1_curves.csv",
                   x=xs)
    man.artifacts.append("fig1_curves.csv")
    write_csv(man, "fig1_spurious_minima.csv", ["x"], [(v,) for v in spur])
    man.check("sup_gap", gap, p["gap_max"], gap <= p["gap_max"])
    man.check("spurious_minima", len(spur), p["min_spurious"], len(spur) >= p["min_spurious"])
    man.summary.append({"sup_gap": gap, "spurious_minima": len(spur)})


RUNNERS: dict[str, Callable] = {
    "stationarity": run_stationarity,
    "escape": run_escape,
    "smoothing_checks": run_smoothing_checks,
    "cheeger_table": run_cheeger_table,
    "conductance": run_conductance,
    "zeroone_learn": run_zeroone_learn,
    "fig1": run_fig1,
}


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    """Run one experiment; always writes a manifest, even after a failure."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(cfg.experiment, cfg.hash(), str(out))
    t0 = time.perf_counter()
    try:
        RUNNERS[cfg.experiment](cfg, man)
    except ConfigError:
        raise
    except Exception as exc:  # partial manifest, reported as a failure
        man.error = f"{type(exc).__name__}: {exc}"
    man.timings["total"] = time.perf_counter() - t0
    man.write()
    return man
