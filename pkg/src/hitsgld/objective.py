"""Objectives, Gaussian randomized smoothing and stochastic gradient oracles.

Every callable here is vectorized over a leading batch axis: ``value`` maps
``(..., d)`` points to ``(...)`` values, ``grad`` maps ``(..., d)`` to
``(..., d)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class AssumptionProfile:
    """Constants describing an objective: range bound, smoothness and
    gradient-noise tails. ``smoothness=None`` marks a non-smooth function."""

    B: float
    smoothness: Optional[float] = None
    grad_subexp: Optional[float] = None
    b_max: Optional[float] = None
    h_max: Optional[float] = None

    def __post_init__(self):
        for name in ("B", "smoothness", "grad_subexp", "b_max", "h_max"):
            val = getattr(self, name)
            if val is not None and not val >= 0:
                raise ValueError(f"{name} must be non-negative, got {val}")


@dataclass(frozen=True)
class Objective:
    name: str
    value: Callable
    profile: AssumptionProfile
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None
    dim: int = 1
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.value(np.asarray(x, dtype=float))

    def scaled(self, factor: float) -> "Objective":
        """The objective ``factor * f`` (used for the temperature reduction)."""
        v, g, h = self.value, self.grad, self.hess
        prof = self.profile
        return replace(
            self,
            name=f"{factor:g}*{self.name}",
            value=lambda x: factor * v(x),
            grad=None if g is None else (lambda x: factor * g(x)),
            hess=None if h is None else (lambda x: factor * h(x)),
            profile=AssumptionProfile(
                B=factor * prof.B,
                smoothness=None if prof.smoothness is None else factor * prof.smoothness,
                grad_subexp=None if prof.grad_subexp is None else factor * prof.grad_subexp,
                b_max=None if prof.b_max is None else prof.b_max / factor,
                h_max=prof.h_max,
            ),
        )

    def check_range(self, space, rng, n=10_000):
        """Sample the space and return ``(min, max)`` of the objective, raising
        if any value leaves ``[0, B]``."""
        pts = space.sample_uniform(rng, n)
        vals = self.value(pts)
        lo, hi = float(vals.min()), float(vals.max())
        if lo < 0 or hi > self.profile.B:
            raise ValueError(f"{self.name}: values in [{lo}, {hi}] escape [0, {self.profile.B}]")
        return lo, hi

    def check_gradient(self, space, rng, n=200, step=1e-6, rtol=1e-4):
        """Compare ``grad`` with central differences at random interior points.
        Returns the worst relative error."""
        if self.grad is None:
            raise ValueError(f"{self.name} has no gradient")
        pts = space.sample_uniform(rng, n)
        g = self.grad(pts)
        fd = np.empty_like(g)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = step
            fd[:, i] = (self.value(pts + e) - self.value(pts - e)) / (2 * step)
        scale = np.maximum(np.linalg.norm(g, axis=1), 1.0)
        worst = float(np.max(np.linalg.norm(g - fd, axis=1) / scale))
        if worst > rtol:
            raise ValueError(f"{self.name}: gradient mismatch {worst:.2e} > {rtol}")
        return worst


# ---------------------------------------------------------------------------
# gradient oracles


class GradientOracle:
    """Stochastic gradient source with its randomness passed in explicitly.

    The SGLD engine pre-draws, per chain and per step, ``n_normal`` standard
    normals and ``n_uniform`` uniforms from a dedicated stream and hands them
    to ``__call__(X, normals, uniforms)`` with ``X`` of shape ``(m, d)``.
    Keeping the draws outside the oracle makes runs replayable and lets many
    chains advance in one vectorized call.
    """

    n_normal = 0
    n_uniform = 0

    def __call__(self, X, normals, uniforms):
        raise NotImplementedError


class ExactGradient(GradientOracle):
    """Deterministic oracle ``g(x) = scale * grad f(x)``."""

    def __init__(self, grad: Callable, scale: float = 1.0):
        self.grad = grad
        self.scale = float(scale)

    def __call__(self, X, normals=None, uniforms=None):
        g = self.grad(X)
        return g if self.scale == 1.0 else self.scale * g


class NoisyGradient(GradientOracle):
    """``grad f(x) + noise_std * w`` with standard normal ``w``; a simple
    unbiased stochastic oracle for tests and demos."""

    def __init__(self, grad: Callable, dim: int, noise_std: float):
        self.grad = grad
        self.noise_std = float(noise_std)
        self.n_normal = int(dim)

    def __call__(self, X, normals, uniforms=None):
        return self.grad(X) + self.noise_std * normals


# ---------------------------------------------------------------------------
# per-sample losses and smoothing


@dataclass
class LossSampler:
    """Empirical risk ``f(x) = mean_i loss(x, data[i])``.

    ``loss(X, rows)`` is vectorized: ``X`` has shape ``(..., d)`` and ``rows``
    shape ``(..., k)`` broadcasting against it.
    """

    loss: Callable
    data: np.ndarray
    B: float
    dim: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim == 1:
            self.data = self.data[:, None]
        if len(self.data) == 0:
            raise ValueError("sample set is empty")

    @property
    def n(self):
        return len(self.data)

    def risk(self, X, chunk=2_000_000):
        """Empirical risk at one point ``(d,)`` or many ``(m, d)``."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        out = np.empty(len(X))
        step = max(1, chunk // self.n)
        for s in range(0, len(X), step):
            blk = X[s:s + step]
            out[s:s + step] = self.loss(blk[:, None, :], self.data[None, :, :]).mean(axis=1)
        return out[0] if single else out

    @classmethod
    def from_objective(cls, obj: Objective) -> "LossSampler":
        """Treat a plain objective as a one-sample loss."""
        return cls(loss=lambda X, rows: obj.value(X), data=np.zeros((1, 1)),
                   B=obj.profile.B, dim=obj.dim)

    @classmethod
    def from_csv(cls, path, loss: Callable, B: float, dim: int) -> "LossSampler":
        """Load one row per sample from a headered CSV file."""
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(loss=loss, data=data, B=B, dim=dim)


class SmoothedObjective:
    """Gaussian smoothing ``f~(x) = E_z f(x + z)``, ``z ~ N(0, sigma^2 I)``.

    ``base`` is a :class:`LossSampler` (empirical risk) or an
    :class:`Objective` (treated as a single-sample loss).
    """

    def __init__(self, base, sigma: float, value_mc_samples: int = 1000):
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        if isinstance(base, Objective):
            base = LossSampler.from_objective(base)
        self.base = base
        self.sigma = float(sigma)
        self.value_mc_samples = int(value_mc_samples)
        B = base.B
        self.profile = AssumptionProfile(
            B=B,
            smoothness=2.0 * B / self.sigma**2,
            grad_subexp=2.0 * B / self.sigma,
            b_max=self.sigma / (2.0 * B),
        )

    @property
    def dim(self):
        return self.base.dim

    @property
    def smoothness_bound(self):
        return self.profile.smoothness

    def value_mc(self, x, m: Optional[int] = None, rng=None):
        """Monte Carlo estimate of ``f~(x)``; returns ``(estimate, std_error)``."""
        m = self.value_mc_samples if m is None else int(m)
        if m < 1:
            raise ValueError("need at least one smoothing sample")
        rng = np.random.default_rng() if rng is None else rng
        x = np.asarray(x, dtype=float)
        z = self.sigma * rng.standard_normal((m, self.dim))
        vals = self.base.risk(x + z)
        se = float(vals.std(ddof=1) / np.sqrt(m)) if m > 1 else float("inf")
        # shifted mean: exact when the loss is constant
        return float(vals[0] + (vals - vals[0]).mean()), se

    def grad_sample(self, X, normals, uniforms):
        """Two-point estimator ``(z / sigma^2) (loss(x+z; a) - loss(x; a))``
        with ``z = sigma * normals`` and ``a`` picked by ``uniforms``."""
        X = np.atleast_2d(X)
        z = self.sigma * normals
        idx = np.minimum((uniforms[:, 0] * self.base.n).astype(np.int64), self.base.n - 1)
        rows = self.base.data[idx]
        diff = self.base.loss(X + z, rows) - self.base.loss(X, rows)
        return z * (diff / self.sigma**2)[:, None]

    def oracle(self, batch: int = 1) -> GradientOracle:
        return SmoothedGradientOracle(self, batch)

    def grad_samples(self, x, N: int, rng):
        """``N`` independent gradient draws at a single point ``x``."""
        X = np.broadcast_to(np.asarray(x, dtype=float), (N, self.dim))
        return self.grad_sample(X, rng.standard_normal((N, self.dim)), rng.random((N, 1)))


class SmoothedGradientOracle(GradientOracle):
    def __init__(self, smoothed: SmoothedObjective, batch: int = 1):
        if batch < 1:
            raise ValueError("batch must be >= 1")
        self.smoothed = smoothed
        self.batch = int(batch)
        self.n_normal = smoothed.dim * self.batch
        self.n_uniform = self.batch

    def __call__(self, X, normals, uniforms):
        d = self.smoothed.dim
        g = self.smoothed.grad_sample(X, normals[:, :d], uniforms[:, :1])
        for j in range(1, self.batch):
            g = g + self.smoothed.grad_sample(
                X, normals[:, j * d:(j + 1) * d], uniforms[:, j:j + 1])
        return g / self.batch if self.batch > 1 else g


def erm_sigma(nu: float, G_psi: float, B: float, rho_K: float) -> float:
    """Smoothing width that keeps ``sup |f~ - F| <= 2 nu``."""
    return nu / max(G_psi, B / rho_K)


# ---------------------------------------------------------------------------
# numerical checks on the smoothing


def check_unbiased(s: SmoothedObjective, x, N: int, rng, m_fd: Optional[int] = None,
                   fd_step: Optional[float] = None):
    """Mean of ``N`` gradient draws against a finite-difference gradient of
    the Monte Carlo smoothed value.

    The finite difference uses a fourth-order stencil with common random
    numbers across the stencil points. Returns a dict with per-coordinate
    means, standard errors and z-scores.
    """
    x = np.asarray(x, dtype=float)
    d = s.dim
    m_fd = N if m_fd is None else int(m_fd)
    h = s.sigma / 4 if fd_step is None else float(fd_step)

    g = s.grad_samples(x, N, rng)
    g_mean = g.mean(axis=0)
    g_se = g.std(axis=0, ddof=1) / np.sqrt(N)

    z = s.sigma * rng.standard_normal((m_fd, d))
    fd_mean = np.empty(d)
    fd_se = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        per = (-s.base.risk(x + 2 * e + z) + 8 * s.base.risk(x + e + z)
               - 8 * s.base.risk(x - e + z) + s.base.risk(x - 2 * e + z)) / (12 * h)
        fd_mean[i] = per.mean()
        fd_se[i] = per.std(ddof=1) / np.sqrt(m_fd)
    combined = np.sqrt(g_se**2 + fd_se**2)
    zscore = np.abs(g_mean - fd_mean) / np.where(combined > 0, combined, np.inf)
    return {"grad_mean": g_mean, "grad_se": g_se, "fd_mean": fd_mean, "fd_se": fd_se,
            "combined_se": combined, "zscore": zscore}


def check_subexponential(s: SmoothedObjective, x, N: int, rng, fractions=(0.1, 0.5, 1.0)):
    """Empirical ``E exp(<u, g>^2)`` against ``exp(|u|^2 (2B/sigma)^2)`` for
    ``|u| = fraction * sigma / (2B)`` along a random direction."""
    g = s.grad_samples(x, N, rng)
    direction = rng.standard_normal(s.dim)
    direction /= np.linalg.norm(direction)
    rows = []
    for frac in fractions:
        u = frac * s.profile.b_max * direction
        vals = np.exp((g @ u) ** 2)
        bound = float(np.exp(np.dot(u, u) * s.profile.grad_subexp**2))
        rows.append({"fraction": frac, "mean": float(vals.mean()),
                     "se": float(vals.std(ddof=1) / np.sqrt(N)), "bound": bound})
    return rows


def verify_smoothness_constant(s: SmoothedObjective, probes, m: int, rng, step=None):
    """Second differences of the Monte Carlo smoothed value along coordinate
    (and, in 2D, diagonal) directions, compared with ``2B / sigma^2``.

    A second difference averages the true second derivative over the stencil,
    so it can never exceed the bound except through Monte Carlo error.
    """
    d = s.dim
    if d > 2:
        raise ValueError("curvature probing supports d <= 2")
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    h = s.sigma / 2 if step is None else float(step)
    dirs = [np.eye(d)[i] for i in range(d)]
    if d == 2:
        dirs += [np.array([1.0, 1.0]) / np.sqrt(2), np.array([1.0, -1.0]) / np.sqrt(2)]
    bound = s.smoothness_bound
    worst, worst_se, violated = 0.0, 0.0, False
    estimates = []
    for x in probes:
        z = s.sigma * rng.standard_normal((m, d))
        f0 = s.base.risk(x + z)
        for e in dirs:
            per = (s.base.risk(x + h * e + z) - 2 * f0 + s.base.risk(x - h * e + z)) / h**2
            est = float(per.mean())
            se = float(per.std(ddof=1) / np.sqrt(m))
            estimates.append(est)
            if abs(est) > worst:
                worst, worst_se = abs(est), se
            if abs(est) - 3 * se > bound:
                violated = True
    return {"max_curvature": worst, "max_curvature_se": worst_se, "bound": bound,
            "violated": violated, "estimates": np.array(estimates)}


# ---------------------------------------------------------------------------
# built-in objectives


def double_well(a: float = 3.2, c: float = 0.5, tilt: float = 0.0, shift: float = 0.0) -> Objective:
    """1D double well ``a (x^2 - c^2)^2 + tilt * (x + 1) + shift`` on ``[-1, 1]``.

    Non-negative on ``[-1, 1]`` for ``tilt, shift >= 0``. A positive tilt
    makes the left well the global minimum.
    """
    offset = abs(tilt) + shift

    def value(x):
        t = x[..., 0]
        return a * (t * t - c * c) ** 2 + tilt * t + offset

    def grad(x):
        t = x[..., 0]
        return (4 * a * t * (t * t - c * c) + tilt)[..., None]

    def hess(x):
        t = x[..., 0]
        return (4 * a * (3 * t * t - c * c))[..., None, None]

    # bounds on [-1, 1]
    B = a * max(c**4, (1 - c * c) ** 2) + 2 * abs(tilt) + shift
    G = max(abs(4 * a * (1 - c * c)) + abs(tilt), 8 * a * c**3 / (3 * np.sqrt(3)) + abs(tilt))
    L = max(abs(4 * a * (3 - c * c)), 4 * a * c * c)
    return Objective("double_well", value, AssumptionProfile(B=B, smoothness=L, grad_subexp=G),
                     grad, hess, 1, {"a": a, "c": c, "tilt": tilt, "shift": shift})


def perturbed_double_well(a: float = 2.0, c: float = 0.5, tilt: float = 0.3,
                          amp: float = 0.04, freq: float = 40.0, shift: float = 0.0) -> Objective:
    """Smooth tilted double well plus a bounded high-frequency ripple.

    The ripple ``amp * (1 - cos(freq * x))`` adds many shallow minima, in the
    spirit of an empirical risk that is uniformly close to a smooth population
    risk. ``population`` on the returned params is the ripple-free base.
    """
    base = double_well(a, c, tilt, shift + 2 * amp)

    def value(x):
        return base.value(x) + amp * (np.cos(freq * x[..., 0]) - 1.0)

    def grad(x):
        return base.grad(x) - (amp * freq * np.sin(freq * x[..., 0]))[..., None]

    def hess(x):
        return base.hess(x) - (amp * freq**2 * np.cos(freq * x[..., 0]))[..., None, None]

    prof = AssumptionProfile(B=base.profile.B, smoothness=base.profile.smoothness + amp * freq**2,
                             grad_subexp=base.profile.grad_subexp + amp * freq)
    return Objective("perturbed_double_well", value, prof, grad, hess, 1,
                     {"a": a, "c": c, "tilt": tilt, "amp": amp, "freq": freq,
                      "population": base})


def quadratic(dim: int, scale: float = 1.0, radius: float = 1.0) -> Objective:
    """``(scale / 2) ||x||^2`` on a ball of the given radius."""
    def value(x):
        return 0.5 * scale * np.einsum("...i,...i->...", x, x)

    def grad(x):
        return scale * x

    def hess(x):
        return np.broadcast_to(scale * np.eye(dim), x.shape[:-1] + (dim, dim))

    prof = AssumptionProfile(B=0.5 * scale * radius**2, smoothness=scale,
                             grad_subexp=scale * radius)
    return Objective("quadratic", value, prof, grad, hess, dim, {"scale": scale, "radius": radius})


def saddle_quartic(conf: float = 1.0) -> Objective:
    """2D strict saddle ``(x1^2 - x2^2)/2 + conf * (x1^4 + x2^4)/4``, shifted
    to be non-negative on the unit disk. Stationary points: the saddle at the
    origin and minima at ``(0, +-1/sqrt(conf))``."""
    shift = 1.0 / (4.0 * conf)

    def value(x):
        a, b = x[..., 0], x[..., 1]
        return 0.5 * (a * a - b * b) + 0.25 * conf * (a**4 + b**4) + shift

    def grad(x):
        a, b = x[..., 0], x[..., 1]
        return np.stack([a + conf * a**3, -b + conf * b**3], axis=-1)

    def hess(x):
        a, b = x[..., 0], x[..., 1]
        h = np.zeros(x.shape[:-1] + (2, 2))
        h[..., 0, 0] = 1 + 3 * conf * a * a
        h[..., 1, 1] = -1 + 3 * conf * b * b
        return h

    # on the unit disk
    prof = AssumptionProfile(B=0.5 + 0.25 * conf + shift, smoothness=1 + 3 * conf,
                             grad_subexp=1 + conf)
    return Objective("saddle_quartic", value, prof, grad, hess, 2, {"conf": conf})


def quadratic_cosine(dim: int, amp: float = 0.5, freq: float = np.pi) -> Objective:
    """``||x||^2 / 2 + amp * sum_i cos(freq * x_i)``; for ``amp * freq^2 > 1``
    the origin is a local maximum surrounded by saddles and minima."""
    shift = amp * dim

    def value(x):
        return 0.5 * np.einsum("...i,...i->...", x, x) + amp * np.cos(freq * x).sum(-1) + shift

    def grad(x):
        return x - amp * freq * np.sin(freq * x)

    def hess(x):
        diag = 1.0 - amp * freq**2 * np.cos(freq * x)
        h = np.zeros(x.shape + (dim,))
        idx = np.arange(dim)
        h[..., idx, idx] = diag
        return h

    prof = AssumptionProfile(B=0.5 + 2 * amp * dim, smoothness=1 + amp * freq**2,
                             grad_subexp=1 + amp * freq * np.sqrt(dim))
    return Objective("quadratic_cosine", value, prof, grad, hess, dim,
                     {"amp": amp, "freq": freq})


def step_loss() -> Objective:
    """1D zero-one step ``1{x < 0}`` with value 1/2 at the origin."""
    def value(x):
        t = x[..., 0]
        return np.where(t < 0, 1.0, np.where(t > 0, 0.0, 0.5))

    return Objective("step", value, AssumptionProfile(B=1.0), None, None, 1)


def constant(value: float, dim: int = 1) -> Objective:
    def f(x):
        return np.full(np.shape(x)[:-1], float(value))

    def g(x):
        return np.zeros(np.shape(x))

    return Objective("constant", f, AssumptionProfile(B=float(value), smoothness=0.0,
                                                      grad_subexp=0.0), g, None, dim)


def linear(c) -> Objective:
    """``<c, x>``; unbounded, only meaningful as a test stub."""
    c = np.atleast_1d(np.asarray(c, dtype=float))

    def f(x):
        return x @ c

    def g(x):
        return np.broadcast_to(c, np.shape(x)).copy()

    return Objective("linear", f, AssumptionProfile(B=float(np.abs(c).sum())), g,
                     lambda x: np.zeros(np.shape(x) + (len(c),)), len(c), {"c": c.tolist()})


BUILTIN = {
    "double_well": double_well,
    "perturbed_double_well": perturbed_double_well,
    "quadratic": quadratic,
    "saddle_quartic": saddle_quartic,
    "quadratic_cosine": quadratic_cosine,
    "step": step_loss,
}


def objective_from_dict(desc: dict) -> Objective:
    name = desc["name"]
    if name not in BUILTIN:
        raise ValueError(f"unknown objective {name!r}; choose from {sorted(BUILTIN)}")
    return BUILTIN[name](**desc.get("params", {}))
