"""Compact parameter spaces: balls, annuli and boxes.

All operations accept a single point of shape ``(d,)`` or a batch of points of
shape ``(m, d)``. Boundaries belong to the set.
"""
from __future__ import annotations

import numpy as np


class ParameterSpace:
    """Base class. Subclasses define ``dim``, ``_contains`` and ``_sample``."""

    kind = "abstract"
    dim: int

    def _check_dim(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise ValueError(
                f"point has trailing dimension {x.shape[-1:]} but the space has d={self.dim}"
            )
        return x

    def contains(self, x):
        """Membership test (closed set). Returns a bool or a boolean array."""
        x = self._check_dim(x)
        out = self._contains(x)
        return bool(out) if out.ndim == 0 else out

    def sample_uniform(self, rng: np.random.Generator, size: int | None = None):
        """Draw uniform points from the space; ``size=None`` returns one point."""
        n = 1 if size is None else int(size)
        pts = self._sample(rng, n)
        return pts[0] if size is None else pts

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    @property
    def volume(self) -> float:
        raise NotImplementedError

    @property
    def default_h_max(self) -> float:
        """Step-size scale under which the Gaussian stay probability stays above 1/3."""
        raise NotImplementedError

    def gaussian_stay_probability(self, x, h: float, m: int, rng: np.random.Generator):
        """Monte Carlo estimate of ``P(y in K)`` for ``y ~ N(x, 2h I)``.

        Returns ``(estimate, standard_error)``; the standard error never
        exceeds ``1/(2 sqrt(m))``.
        """
        x = self._check_dim(x)
        if x.ndim != 1:
            raise ValueError("gaussian_stay_probability takes a single point")
        if not self.contains(x):
            raise ValueError(f"point {x} is not in the parameter space")
        if h <= 0 or m < 1:
            raise ValueError("need h > 0 and m >= 1")
        y = x + np.sqrt(2.0 * h) * rng.standard_normal((m, self.dim))
        p = float(np.mean(self._contains(y)))
        return p, float(np.sqrt(p * (1.0 - p) / m))

    def to_dict(self) -> dict:
        raise NotImplementedError


class Ball(ParameterSpace):
    kind = "ball"

    def __init__(self, center, radius: float):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        if not radius > 0:
            raise ValueError("ball radius must be positive")
        self.radius = float(radius)
        self.dim = self.center.shape[0]

    def _contains(self, x):
        diff = x - self.center
        return np.einsum("...i,...i->...", diff, diff) <= self.radius**2

    def _sample(self, rng, n):
        return self.center + self.radius * _isotropic(rng, n, self.dim, 0.0, 1.0)

    @property
    def diameter(self):
        return 2.0 * self.radius

    @property
    def volume(self):
        return _unit_ball_volume(self.dim) * self.radius**self.dim

    @property
    def default_h_max(self):
        return 1e-2 * self.radius**2 / self.dim**2

    def radial_cdf(self, r):
        """CDF of the distance to the center under uniform sampling."""
        return np.clip(np.asarray(r) / self.radius, 0.0, 1.0) ** self.dim

    def to_dict(self):
        return {"kind": "ball", "dim": self.dim,
                "params": {"center": self.center.tolist(), "radius": self.radius}}

    def __repr__(self):
        return f"Ball(center={self.center.tolist()}, radius={self.radius})"


class Annulus(ParameterSpace):
    """Spherical shell ``{r_in <= ||x|| <= r_out}`` centered at the origin."""

    kind = "annulus"

    def __init__(self, r_in: float, r_out: float, dim: int):
        if not 0 < r_in < r_out:
            raise ValueError("annulus needs 0 < r_in < r_out")
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.r_in = float(r_in)
        self.r_out = float(r_out)
        self.dim = int(dim)

    def _contains(self, x):
        sq = np.einsum("...i,...i->...", x, x)
        return (sq >= self.r_in**2) & (sq <= self.r_out**2)

    def _sample(self, rng, n):
        return _isotropic(rng, n, self.dim, self.r_in, self.r_out)

    @property
    def diameter(self):
        return 2.0 * self.r_out

    @property
    def volume(self):
        return _unit_ball_volume(self.dim) * (self.r_out**self.dim - self.r_in**self.dim)

    @property
    def default_h_max(self):
        scale = min(self.r_out, 2.0 * (self.r_out - self.r_in))
        return 1e-2 * scale**2 / self.dim**2

    def radial_cdf(self, r):
        r = np.clip(np.asarray(r, dtype=float), self.r_in, self.r_out)
        d = self.dim
        return (r**d - self.r_in**d) / (self.r_out**d - self.r_in**d)

    def dilate(self, rho: float) -> "Annulus":
        """The set of points within distance ``rho`` of the annulus."""
        return Annulus(max(self.r_in - rho, 1e-12), self.r_out + rho, self.dim)

    def to_dict(self):
        return {"kind": "annulus", "dim": self.dim,
                "params": {"r_in": self.r_in, "r_out": self.r_out}}

    def __repr__(self):
        return f"Annulus(r_in={self.r_in}, r_out={self.r_out}, dim={self.dim})"


class Box(ParameterSpace):
    kind = "box"

    def __init__(self, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValueError("lo and hi must be vectors of equal length")
        if not np.all(self.lo < self.hi):
            raise ValueError("box needs lo[i] < hi[i] for every i")
        self.dim = self.lo.shape[0]

    def _contains(self, x):
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def _sample(self, rng, n):
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))

    @property
    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def volume(self):
        return float(np.prod(self.hi - self.lo))

    @property
    def default_h_max(self):
        # Corners keep only 2^-d of the Gaussian mass, so only d = 1 meets 1/3.
        if self.dim > 1:
            return float("nan")
        return 1e-2 * float(np.min(self.hi - self.lo)) ** 2

    def to_dict(self):
        return {"kind": "box", "dim": self.dim,
                "params": {"lo": self.lo.tolist(), "hi": self.hi.tolist()}}

    def __repr__(self):
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


def space_from_dict(desc: dict) -> ParameterSpace:
    """Build a space from a ``{kind, params, dim}`` config block."""
    kind = desc["kind"]
    params = desc.get("params", {})
    dim = desc.get("dim")
    if kind == "ball":
        center = params.get("center", [0.0] * int(dim))
        space = Ball(center, params.get("radius", 1.0))
    elif kind == "annulus":
        space = Annulus(params["r_in"], params["r_out"], int(dim))
    elif kind == "box":
        space = Box(params["lo"], params["hi"])
    else:
        raise ValueError(f"unknown space kind {kind!r}")
    if dim is not None and int(dim) != space.dim:
        raise ValueError(f"declared dim {dim} does not match parameters (d={space.dim})")
    return space


def _isotropic(rng, n, d, r_in, r_out):
    direction = rng.standard_normal((n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    u = rng.random(n)
    # inverse CDF of the r^(d-1) radial density on [r_in, r_out]
    r = (r_in**d + u * (r_out**d - r_in**d)) ** (1.0 / d)
    return direction * r[:, None]


def _unit_ball_volume(d):
    from scipy.special import gammaln

    return float(np.exp(0.5 * d * np.log(np.pi) - gammaln(0.5 * d + 1.0)))

