"""Stochastic Gradient Langevin Dynamics with best-iterate output.

The engine advances a batch of independent chains in lockstep so that many
seeds can be simulated with one vectorized update per step. Every chain owns
three random streams spawned from its seed (initial point, Langevin noise,
oracle randomness), so a chain's trajectory does not depend on which other
chains share its batch.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .objective import ExactGradient, GradientOracle

_BLOCK = 2048


@dataclass(frozen=True)
class SgldConfig:
    xi: float
    eta: float
    k_max: int
    dist_bound: Optional[float] = None
    eval_stride: int = 1
    seed: int = 0

    def __post_init__(self):
        if not (self.xi > 0 and self.eta > 0):
            raise ValueError("xi and eta must be positive")
        if self.k_max < 0:
            raise ValueError("k_max must be non-negative")
        if self.dist_bound is not None and not self.dist_bound > 0:
            raise ValueError("dist_bound must be positive")
        if self.eval_stride < 1:
            raise ValueError("eval_stride must be >= 1")

    def radius(self, d: int) -> float:
        """Rejection radius; defaults to ``4 sqrt(2 eta d / xi)``."""
        if self.dist_bound is not None:
            return float(self.dist_bound)
        return 4.0 * math.sqrt(2.0 * self.eta * d / self.xi)


@dataclass(frozen=True)
class TargetSet:
    """A set ``U`` and dilation radius ``rho``; a chain hits when
    ``d(x, U) <= rho``.

    ``distance`` maps ``(m, d)`` points to their distance from ``U``; when it
    is missing only ``rho == 0`` is allowed and ``predicate`` decides
    membership directly.
    """

    name: str
    predicate: Callable
    rho: float = 0.0
    distance: Optional[Callable] = None

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.rho > 0 and self.distance is None:
            raise ValueError(f"target {self.name!r}: rho > 0 needs a distance function")

    def hit(self, X):
        if self.rho == 0 or self.distance is None:
            if self.distance is not None:
                return self.distance(X) <= 0.0
            return np.asarray(self.predicate(X), dtype=bool)
        return self.distance(X) <= self.rho

    @classmethod
    def ball(cls, name, center, radius=0.0, rho=0.0):
        """Ball ``B(center; radius)``; with ``radius=0`` a single point."""
        center = np.atleast_1d(np.asarray(center, dtype=float))

        def dist(X):
            return np.maximum(np.linalg.norm(X - center, axis=-1) - radius, 0.0)

        return cls(name, lambda X: dist(X) <= 0.0, rho, dist)

    @classmethod
    def everything(cls, name="K"):
        return cls(name, lambda X: np.ones(np.shape(X)[:-1], dtype=bool))


@dataclass
class Trace:
    """Record of one run, thinned by ``eval_stride``."""

    steps: np.ndarray
    iterates: np.ndarray
    f_values: np.ndarray
    best_index: int
    hitting: dict
    accept_rate: float
    seed: int
    noise_draws: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.steps)

    @property
    def x_hat(self):
        return self.iterates[self.best_index]

    def to_csv(self, path):
        """Columns ``k, x_1..x_d, f`` and one 0/1 column per target that flips
        to 1 from the hitting step on."""
        d = self.iterates.shape[1]
        names = sorted(self.hitting)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k"] + [f"x_{i + 1}" for i in range(d)] + ["f"]
                       + [f"hit_{n}" for n in names])
            for k, x, fv in zip(self.steps, self.iterates, self.f_values):
                flags = [int(self.hitting[n] is not None and k >= self.hitting[n]) for n in names]
                w.writerow([int(k)] + [repr(float(v)) for v in x] + [repr(float(fv))] + flags)


def sgld_step(x, g, w, cfg: SgldConfig, space):
    """One update: propose ``x - eta g + sqrt(2 eta / xi) w`` and keep it only
    if it lies in the space and within the rejection radius of ``x``."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    w = np.asarray(w, dtype=float)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(w))):
        raise FloatingPointError("non-finite gradient or noise")
    y = x - cfg.eta * g + math.sqrt(2.0 * cfg.eta / cfg.xi) * w
    r = cfg.radius(x.shape[-1])
    if space.contains(y) and float(np.sum((y - x) ** 2)) <= r * r:
        return y
    return x


def sgd_step(x, g, w, cfg: SgldConfig, space):
    """Bounded-noise baseline ``x - eta (g + w)`` with the same rejection rule."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    w = np.asarray(w, dtype=float)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(w))):
        raise FloatingPointError("non-finite gradient or noise")
    y = x - cfg.eta * (g + w)
    r = cfg.radius(x.shape[-1])
    if space.contains(y) and float(np.sum((y - x) ** 2)) <= r * r:
        return y
    return x


def _streams(seed):
    init, noise, oracle = np.random.SeedSequence(int(seed)).spawn(3)
    return (np.random.default_rng(init), np.random.default_rng(noise),
            np.random.default_rng(oracle))


def _as_oracle(oracle):
    if isinstance(oracle, GradientOracle):
        return oracle
    if callable(oracle):
        return ExactGradient(oracle)
    raise TypeError("oracle must be a GradientOracle or a gradient callable")


def _run(kind, oracle, f_eval, space, cfg, seeds, targets, x0, record_noise):
    oracle = _as_oracle(oracle)
    d = space.dim
    m = len(seeds)
    streams = [_streams(s) for s in seeds]

    if x0 is None:
        X = np.stack([space.sample_uniform(st[0]) for st in streams])
    else:
        X = np.array(np.broadcast_to(np.asarray(x0, dtype=float), (m, d)))
        if not np.all(space.contains(X)):
            raise ValueError("initial point is outside the parameter space")

    eta = cfg.eta
    noise_scale = math.sqrt(2.0 * eta / cfg.xi)
    r2 = cfg.radius(d) ** 2
    stride = cfg.eval_stride
    n_rec = cfg.k_max // stride + 1
    rec = np.empty((n_rec, m, d))
    rec[0] = X
    hit = {t.name: np.full(m, -1, dtype=np.int64) for t in targets}
    for t in targets:
        hit[t.name][t.hit(X)] = 0
    noise_log = np.empty((cfg.k_max, m, d)) if record_noise else None
    accepted = np.zeros(m, dtype=np.int64)
    nn, nu = oracle.n_normal, oracle.n_uniform
    empty = np.empty((m, 0))

    k = 0
    while k < cfg.k_max:
        blk = min(_BLOCK, cfg.k_max - k)
        W = np.stack([st[1].standard_normal((blk, d)) for st in streams], axis=1)
        if record_noise:
            noise_log[k:k + blk] = W
        ON = (np.stack([st[2].standard_normal((blk, nn)) for st in streams], axis=1)
              if nn else None)
        OU = (np.stack([st[2].random((blk, nu)) for st in streams], axis=1)
              if nu else None)
        for j in range(blk):
            k += 1
            G = oracle(X, empty if ON is None else ON[j], empty if OU is None else OU[j])
            if not np.isfinite(G).all():
                bad = int(np.flatnonzero(~np.isfinite(G).all(axis=1))[0])
                raise FloatingPointError(
                    f"non-finite stochastic gradient at step {k} (seed {seeds[bad]})")
            if kind == "sgld":
                Y = X - eta * G + noise_scale * W[j]
            else:
                Y = X - eta * (G + W[j])
            step = Y - X
            ok = space._contains(Y) & (np.einsum("ij,ij->i", step, step) <= r2)
            X = np.where(ok[:, None], Y, X)
            accepted += ok
            for t in targets:
                h = hit[t.name]
                newly = t.hit(X) & (h < 0)
                if newly.any():
                    h[newly] = k
            if k % stride == 0:
                rec[k // stride] = X

    steps = np.arange(n_rec) * stride
    flat = rec.reshape(-1, d)
    fvals = np.asarray(f_eval(flat), dtype=float).reshape(n_rec, m)
    out = []
    for c in range(m):
        best = int(np.argmin(fvals[:, c]))
        trace = Trace(
            steps=steps,
            iterates=rec[:, c, :].copy(),
            f_values=fvals[:, c].copy(),
            best_index=best,
            hitting={n: (int(h[c]) if h[c] >= 0 else None) for n, h in hit.items()},
            accept_rate=float(accepted[c] / cfg.k_max) if cfg.k_max else 1.0,
            seed=int(seeds[c]),
            noise_draws=None if noise_log is None else noise_log[:, c, :].copy(),
            meta={"kind": kind, "xi": cfg.xi, "eta": cfg.eta, "radius": math.sqrt(r2)},
        )
        out.append((trace.x_hat.copy(), trace))
    return out


def sgld_run(oracle, f_eval, space, cfg: SgldConfig, targets: Sequence[TargetSet] = (),
             x0=None, record_noise=False):
    """Run SGLD from a uniform start (or ``x0``) for ``cfg.k_max`` steps.

    ``oracle`` is a :class:`GradientOracle` or a plain gradient callable.
    ``f_eval`` is evaluated on every ``eval_stride``-th iterate and the
    recorded iterate with the smallest value (first on ties) is returned.
    Hitting times are checked at every step.
    """
    return _run("sgld", oracle, f_eval, space, cfg, [cfg.seed], targets, x0, record_noise)[0]


def sgld_run_seeds(oracle, f_eval, space, cfg: SgldConfig, seeds: Sequence[int],
                   targets: Sequence[TargetSet] = (), x0=None):
    """Independent SGLD runs for several seeds, advanced together.

    Each run is identical to ``sgld_run`` with ``cfg.seed`` replaced by its seed.
    """
    return _run("sgld", oracle, f_eval, space, cfg, list(seeds), targets, x0, False)


def sgd_run(oracle, f_eval, space, cfg: SgldConfig, targets: Sequence[TargetSet] = (),
            x0=None, record_noise=False):
    """Noisy gradient descent ``x - eta (g + w)``, ``w ~ N(0, I)``, with the
    same rejection rule and bookkeeping as :func:`sgld_run`; ``cfg.xi`` only
    enters through the default rejection radius."""
    return _run("sgd", oracle, f_eval, space, cfg, [cfg.seed], targets, x0, record_noise)[0]


def sgd_run_seeds(oracle, f_eval, space, cfg: SgldConfig, seeds: Sequence[int],
                  targets: Sequence[TargetSet] = (), x0=None):
    return _run("sgd", oracle, f_eval, space, cfg, list(seeds), targets, x0, False)
