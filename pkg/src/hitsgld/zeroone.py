"""Linear classification with the zero-one loss under Massart label noise.

Features are uniform on the unit sphere. The clean label of ``a`` is
``sgn<x*, a>`` (with ``sgn(0) = +1``) and it is kept with probability
``(1 + kappa(a)) / 2``, where ``kappa(a) >= c0 |<x*, a>|``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .objective import LossSampler
from .space import Annulus

_CHUNK = 200_000


def _chunk(n_points):
    return max(1000, min(_CHUNK, 4_000_000 // max(n_points, 1)))


def sample_features(n: int, d: int, rng) -> np.ndarray:
    """``n`` i.i.d. uniform unit vectors in ``R^d``."""
    if d < 1:
        raise ValueError("d must be positive")
    A = rng.standard_normal((n, d))
    norms = np.linalg.norm(A, axis=1, keepdims=True)
    # a zero row has probability zero; redraw defensively
    while np.any(norms == 0):
        bad = norms[:, 0] == 0
        A[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(A, axis=1, keepdims=True)
    return A / norms


def _sgn(t):
    return np.where(t >= 0, 1.0, -1.0)


class MassartModel:
    """Ground truth ``x*`` with noise margin ``kappa``; the default is the
    minimal ``kappa(a) = c0 |<x*, a>|``."""

    def __init__(self, x_star, c0: float, kappa: Optional[Callable] = None,
                 check_samples: int = 10_000, seed: int = 0):
        x_star = np.asarray(x_star, dtype=float)
        if abs(np.linalg.norm(x_star) - 1.0) > 1e-12:
            raise ValueError("x_star must be a unit vector")
        if not 0 < c0 <= 1:
            raise ValueError("c0 must lie in (0, 1]")
        self.x_star = x_star
        self.c0 = float(c0)
        self.custom_kappa = kappa is not None
        self._kappa = kappa
        if kappa is not None:
            A = sample_features(check_samples, self.dim, np.random.default_rng(seed))
            k = np.asarray(kappa(A), dtype=float)
            if np.any(k < self.c0 * np.abs(A @ x_star) - 1e-12) or np.any((k < 0) | (k > 1)):
                raise ValueError("kappa violates c0 |<x*, a>| <= kappa(a) <= 1")

    @property
    def dim(self):
        return len(self.x_star)

    def kappa(self, A):
        A = np.asarray(A, dtype=float)
        if self._kappa is not None:
            return np.asarray(self._kappa(A), dtype=float)
        return self.c0 * np.abs(A @ self.x_star)

    def expected_abs_margin(self) -> float:
        """``E |<x*, a>|`` for uniform ``a`` on the sphere."""
        d = self.dim
        return math.exp(math.lgamma(d / 2) - math.lgamma((d + 1) / 2)) / math.sqrt(math.pi)

    def optimal_risk(self) -> float:
        """``F(x*)`` under the minimal noise model."""
        if self.custom_kappa:
            raise ValueError("closed form only for the minimal noise model")
        return 0.5 * (1.0 - self.c0 * self.expected_abs_margin())

    @classmethod
    def random(cls, d: int, c0: float, rng):
        return cls(sample_features(1, d, rng)[0], c0)


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be (n, d) with one label per row")
        if np.any(np.abs(np.linalg.norm(self.features, axis=1) - 1.0) > 1e-12):
            raise ValueError("features must be unit vectors")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")

    @property
    def n(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    def rows(self):
        return np.column_stack([self.features, self.labels])

    def to_csv(self, path):
        d = self.dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"a_{i + 1}" for i in range(d)] + ["b"])
            for a, b in zip(self.features, self.labels):
                w.writerow([repr(float(v)) for v in a] + [int(b)])

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :-1], data[:, -1])


def gen_labels(model: MassartModel, features, rng) -> LabeledDataset:
    A = np.asarray(features, dtype=float)
    clean = _sgn(A @ model.x_star)
    keep = rng.random(len(A)) < (1.0 + model.kappa(A)) / 2.0
    return LabeledDataset(A, np.where(keep, clean, -clean))


def sample_dataset(model: MassartModel, n: int, rng) -> LabeledDataset:
    return gen_labels(model, sample_features(n, model.dim, rng), rng)


def zero_one_loss(x, a, b):
    """0 when ``b <x, a> > 0``, 1 when ``< 0`` and 1/2 when ``<x, a> = 0``.
    Broadcasts over leading axes."""
    m = np.einsum("...i,...i->...", np.asarray(x, dtype=float), np.asarray(a, dtype=float))
    return _loss_from_margin(m, np.asarray(b, dtype=float))


def _loss_from_margin(m, b):
    s = b * m
    return np.where(m == 0, 0.5, np.where(s > 0, 0.0, 1.0))


def empirical_risk(x, ds: LabeledDataset):
    """Mean zero-one loss at one point ``(d,)`` or a batch ``(m, d)``."""
    if ds.n == 0:
        raise ValueError("empty dataset")
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    out = np.empty(len(X))
    step = max(1, _CHUNK * 16 // ds.n)
    for s in range(0, len(X), step):
        M = X[s:s + step] @ ds.features.T
        out[s:s + step] = _loss_from_margin(M, ds.labels[None, :]).mean(axis=1)
    return float(out[0]) if single else out


def zero_one_sampler(ds: LabeledDataset) -> LossSampler:
    """Per-sample loss table for smoothing: rows are ``(a_1..a_d, b)``."""
    d = ds.dim

    def loss(X, rows):
        return zero_one_loss(X, rows[..., :d], rows[..., d])

    return LossSampler(loss=loss, data=ds.rows(), B=1.0, dim=d)


def population_risk_mc(x, model: MassartModel, m: int, rng):
    """Fresh-sample estimate of ``F`` at one point or a batch of points,
    all evaluated on the same draws. Returns ``(estimate, std_error)``."""
    if m < 1:
        raise ValueError("need m >= 1")
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    tot = np.zeros(len(X))
    tot2 = np.zeros(len(X))
    done = 0
    while done < m:
        k = min(_chunk(len(X)), m - done)
        ds = sample_dataset(model, k, rng)
        L = _loss_from_margin(ds.features @ X.T, ds.labels[:, None])
        tot += L.sum(axis=0)
        tot2 += (L * L).sum(axis=0)
        done += k
    mean = tot / m
    var = np.maximum(tot2 / m - mean**2, 0.0)
    se = np.sqrt(var / max(m - 1, 1))
    return (float(mean[0]), float(se[0])) if single else (mean, se)


def population_risk_diff_mc(x, y, model: MassartModel, m: int, rng):
    """``F(x) - F(y)`` on common draws; returns ``(estimate, std_error)``."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    tot = np.zeros(len(X))
    tot2 = np.zeros(len(X))
    done = 0
    while done < m:
        k = min(_chunk(len(X)), m - done)
        ds = sample_dataset(model, k, rng)
        D = (_loss_from_margin(ds.features @ X.T, ds.labels[:, None])
             - _loss_from_margin(ds.features @ Y.T, ds.labels[:, None]))
        tot += D.sum(axis=0)
        tot2 += (D * D).sum(axis=0)
        done += k
    mean = tot / m
    se = np.sqrt(np.maximum(tot2 / m - mean**2, 0.0) / max(m - 1, 1))
    return mean, se


def disagreement_probability(x, y) -> float:
    """Probability that ``sgn<x, a>`` and ``sgn<y, a>`` differ for uniform ``a``:
    ``arccos(cos angle(x, y)) / pi``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValueError("disagreement is undefined for the zero vector")
    c = float(np.clip(x @ y / (nx * ny), -1.0, 1.0))
    return math.acos(c) / math.pi


def disagreement_mc(x, y, m: int, rng):
    """Monte Carlo frequency of sign disagreement; returns ``(freq, se)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    hits = 0
    done = 0
    while done < m:
        k = min(_CHUNK, m - done)
        A = sample_features(k, len(x), rng)
        hits += int(np.sum(_sgn(A @ x) != _sgn(A @ y)))
        done += k
    p = hits / m
    return p, math.sqrt(p * (1 - p) / m)


def dilated_annulus(rho: float, d: int, r_in=0.5, r_out=1.0) -> Annulus:
    """The annulus ``{r_in <= |x| <= r_out}`` dilated by ``rho``."""
    return Annulus(r_in, r_out, d).dilate(rho)


def uniform_gap(ds: LabeledDataset, model: MassartModel, probes, m: int, rng) -> dict:
    """``max_probe |empirical_risk - F_mc|`` with the ``sqrt(d log(n/d)/n)`` reference."""
    P = np.atleast_2d(np.asarray(probes, dtype=float))
    emp = empirical_risk(P, ds)
    pop, se = population_risk_mc(P, model, m, rng)
    gaps = np.abs(emp - pop)
    n, d = ds.n, ds.dim
    ref = math.sqrt(d * math.log(max(n / d, math.e)) / n)
    k = int(np.argmax(gaps))
    return {"gap": float(gaps[k]), "gap_se": float(se[k]), "reference": ref,
            "gaps": gaps, "empirical": emp, "population": pop}


def lipschitz_check(model: MassartModel, pairs, m: int, rng, const: float = 3.0) -> dict:
    """``|F(x) - F(y)| <= const |x - y| + 2 se`` on common-draw estimates."""
    pairs = np.asarray(pairs, dtype=float)
    X, Y = pairs[:, 0], pairs[:, 1]
    diff, se = population_risk_diff_mc(X, Y, model, m, rng)
    dist = np.linalg.norm(X - Y, axis=1)
    slack = const * dist + 2 * se - np.abs(diff)
    return {"holds": bool(np.all(slack >= 0)), "min_slack": float(slack.min()),
            "diff": diff, "se": se, "dist": dist}


# ---------------------------------------------------------------------------
# one-dimensional threshold task (stand-in for the risk-landscape figure)


def threshold_noise(c0: float):
    """Flip margin ``kappa(a) = c0 |2a - 1|`` around the threshold 1/2."""
    return lambda a: c0 * np.abs(2 * np.asarray(a) - 1)


def threshold_population_risk(xgrid, c0: float):
    """Exact risk of the threshold classifier at ``x`` when ``a ~ U[0, 1]``
    and labels follow ``sgn(a - 1/2)`` with margin ``c0 |2a - 1|``."""
    x = np.clip(np.asarray(xgrid, dtype=float), 0.0, 1.0)
    return 0.5 * (1.0 - 0.5 * c0) + c0 * (x - 0.5) ** 2


def threshold_empirical_risk(xgrid, a, b):
    """Mean of ``1{b (a - x) < 0}`` on a grid of thresholds, via sorting."""
    x = np.asarray(xgrid, dtype=float)
    pos = np.sort(a[b > 0])
    neg = np.sort(a[b < 0])
    # positives with a < x and negatives with a > x are misclassified
    miss_pos = np.searchsorted(pos, x, side="left")
    miss_neg = len(neg) - np.searchsorted(neg, x, side="right")
    return (miss_pos + miss_neg) / len(a)


def fig1_tasks(n: int, rng, grid: int = 10_000, c0: float = 0.5):
    """Empirical and population risk curves of the 1D threshold task.

    Returns ``(xgrid, empirical, population)``.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    a = rng.random(n)
    clean = _sgn(a - 0.5)
    keep = rng.random(n) < (1.0 + threshold_noise(c0)(a)) / 2.0
    b = np.where(keep, clean, -clean)
    xs = np.linspace(0.0, 1.0, grid)
    return xs, threshold_empirical_risk(xs, a, b), threshold_population_risk(xs, c0)


def plateau_minima(values):
    """Strict local minima of a grid curve after merging equal neighbours.

    Returns ``(start, end)`` inclusive index ranges; the curve ends count when
    lower than their single neighbour plateau.
    """
    v = np.asarray(values, dtype=float)
    change = np.flatnonzero(np.diff(v) != 0) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change - 1, [len(v) - 1]])
    pv = v[starts]
    k = len(pv)
    out = []
    for i in range(k):
        left = pv[i - 1] if i > 0 else np.inf
        right = pv[i + 1] if i < k - 1 else np.inf
        if pv[i] < left and pv[i] < right and k > 1:
            out.append((int(starts[i]), int(ends[i])))
    return out


def spurious_minima(xgrid, empirical, population):
    """Empirical local minima whose plateau holds no population local minimum."""
    pop_min = [s for s, _ in plateau_minima(population)]
    spur = []
    for s, e in plateau_minima(empirical):
        if not any(s <= p <= e for p in pop_min):
            spur.append(float(np.mean(xgrid[s:e + 1])))
    return spur
