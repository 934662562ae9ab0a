"""Restricted Cheeger constants on grids and vector-field lower bounds.

The restricted Cheeger constant of a set ``V`` under the Gibbs measure
``mu_f ~ exp(-f)`` is the liminf, as ``eps -> 0``, of

    inf_{A subset V} (mu(A_eps) - mu(A)) / (eps mu(A))

where ``A_eps`` is the ``eps``-neighbourhood of ``A`` inside ``K``. Here the
infimum runs over structured candidate families on a grid (``d <= 2``) and
the limit is taken by linear extrapolation over a short ``eps`` ladder.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.special import ndtr

from .space import Annulus, Ball, Box, ParameterSpace

DEFAULT_EPS_FRACTIONS = (0.08, 0.04, 0.02, 0.01)


# ---------------------------------------------------------------------------
# grid measure


@dataclass(frozen=True)
class GridMeasure:
    """Discretized Gibbs measure on a regular grid covering ``space``.

    Arrays are flat over the full rectangular grid; cells whose center lies
    outside the space carry zero weight and ``inside == False``.
    """

    space: ParameterSpace
    shape: tuple
    lo: np.ndarray
    spacing: np.ndarray
    centers: np.ndarray
    inside: np.ndarray
    f_values: np.ndarray
    weights: np.ndarray

    @property
    def dim(self):
        return len(self.shape)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def h(self):
        return float(self.spacing.min())

    def mask(self, pred) -> np.ndarray:
        """Cells of ``K`` selected by a :class:`SetPredicate`, callable or mask."""
        if isinstance(pred, SetPredicate):
            m = pred.mask(self)
        elif callable(pred):
            m = np.asarray(pred(self.centers), dtype=bool)
        else:
            m = np.asarray(pred, dtype=bool)
        if m.shape != self.inside.shape:
            raise ValueError("mask does not match the grid")
        return m & self.inside

    def measure(self, pred) -> float:
        return float(self.weights[self.mask(pred)].sum())

    def same_geometry(self, other: "GridMeasure") -> bool:
        return (self.shape == other.shape and np.allclose(self.lo, other.lo)
                and np.allclose(self.spacing, other.spacing)
                and np.array_equal(self.inside, other.inside))

    def grid(self, arr):
        return np.asarray(arr).reshape(self.shape)

    def distance_to(self, mask) -> np.ndarray:
        """Euclidean distance from every cell center to the nearest cell of ``mask``."""
        m = self.grid(mask)
        if not m.any():
            return np.full(m.size, np.inf)
        return ndimage.distance_transform_edt(~m, sampling=self.spacing).ravel()

    def dilate(self, mask, eps: float) -> np.ndarray:
        """Cells of ``K`` within ``eps`` (center to center) of ``mask``."""
        return (self.distance_to(mask) <= eps * (1 + 1e-9)) & self.inside


def _bounding_box(space):
    if isinstance(space, Box):
        return space.lo, space.hi
    if isinstance(space, Ball):
        return space.center - space.radius, space.center + space.radius
    if isinstance(space, Annulus):
        r = np.full(space.dim, space.r_out)
        return -r, r
    raise TypeError(f"no grid support for {type(space).__name__}")


def build_grid_measure(space: ParameterSpace, f, resolution) -> GridMeasure:
    """Grid of ``resolution`` cells per axis with weights ``exp(-f(center))``.

    ``f`` is any callable mapping ``(N, d)`` points to ``(N,)`` values.
    """
    d = space.dim
    if d > 2:
        raise ValueError("grid measures are only supported for d <= 2")
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (d,))
    if np.any(res < 2):
        raise ValueError("resolution must be at least 2 cells per axis")
    lo, hi = _bounding_box(space)
    spacing = (hi - lo) / res
    axes = [lo[i] + (np.arange(res[i]) + 0.5) * spacing[i] for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    inside = np.asarray(space.contains(centers), dtype=bool)
    if not inside.any():
        raise ValueError("grid has no cells inside the space")
    fv = np.full(len(centers), np.nan)
    fv[inside] = np.asarray(f(centers[inside]), dtype=float)
    if not np.all(np.isfinite(fv[inside])):
        raise ValueError("objective is not finite on the grid")
    w = np.zeros(len(centers))
    w[inside] = np.exp(-(fv[inside] - fv[inside].min()))
    w /= w.sum()
    return GridMeasure(space, tuple(int(r) for r in res), np.asarray(lo, float),
                       np.asarray(spacing, float), centers, inside, fv, w)


# ---------------------------------------------------------------------------
# sets and candidate families


@dataclass(frozen=True)
class SetPredicate:
    """A named subset of ``K`` given by a vectorized point predicate."""

    name: str
    func: Callable

    def mask(self, gm: GridMeasure) -> np.ndarray:
        return np.asarray(self.func(gm.centers), dtype=bool) & gm.inside

    def __call__(self, X):
        return np.asarray(self.func(np.asarray(X, dtype=float)), dtype=bool)

    def complement(self, name=None) -> "SetPredicate":
        return SetPredicate(name or f"not({self.name})", lambda X: ~self(X))

    @classmethod
    def interval(cls, lo, hi, name=None):
        return cls(name or f"[{lo:g},{hi:g}]",
                   lambda X: (X[..., 0] >= lo) & (X[..., 0] <= hi))

    @classmethod
    def ball(cls, center, radius, name=None):
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(name or f"ball({c.tolist()},{radius:g})",
                   lambda X: np.linalg.norm(X - c, axis=-1) <= radius)

    @classmethod
    def everything(cls):
        return cls("K", lambda X: np.ones(np.shape(X)[:-1], dtype=bool))


def _runs(mask_1d):
    """Inclusive ``(start, end)`` index pairs of consecutive True cells."""
    m = np.concatenate([[False], mask_1d, [False]]).astype(np.int8)
    dm = np.diff(m)
    return list(zip(np.flatnonzero(dm == 1), np.flatnonzero(dm == -1) - 1))


class Family:
    """Candidate sets ``A subset V``; subclasses return per-eps infima."""

    name = "family"

    def infima(self, gm: GridMeasure, V: np.ndarray, eps_seq):
        raise NotImplementedError


class IntervalFamily(Family):
    """Every interval of grid cells contained in ``V`` (1D only)."""

    name = "intervals"

    def infima(self, gm, V, eps_seq):
        if gm.dim != 1:
            raise ValueError("interval family needs a 1D grid")
        n = gm.shape[0]
        S = np.concatenate([[0.0], np.cumsum(gm.weights)])
        out = [(np.inf, None)] * len(eps_seq)
        h = gm.spacing[0]
        for s, e in _runs(V):
            idx = np.arange(s, e + 1)
            i, j = np.meshgrid(idx, idx, indexing="ij")
            valid = j >= i
            muA = np.where(valid, S[j + 1] - S[i], np.nan)
            for t, eps in enumerate(eps_seq):
                k = int(math.floor(eps / h * (1 + 1e-9)))
                muE = S[np.minimum(j + 1 + k, n)] - S[np.maximum(i - k, 0)]
                with np.errstate(invalid="ignore", divide="ignore"):
                    r = (muE - muA) / (eps * muA)
                r = np.where(valid & (muA > 0), r, np.inf)
                flat = int(np.argmin(r))
                if r.flat[flat] < out[t][0]:
                    a, b = i.flat[flat], j.flat[flat]
                    lo = gm.lo[0] + a * h
                    out[t] = (float(r.flat[flat]), f"interval[{lo:.6g},{lo + (b - a + 1) * h:.6g}]")
        return out


class UnionFamily(Family):
    """Unions of up to ``max_parts`` disjoint intervals whose endpoints lie
    on a coarse break grid inside each run of ``V`` (1D only)."""

    name = "unions"

    def __init__(self, n_breaks: int = 10, max_parts: int = 3):
        self.n_breaks = int(n_breaks)
        self.max_parts = int(max_parts)

    def infima(self, gm, V, eps_seq):
        if gm.dim != 1:
            raise ValueError("union family needs a 1D grid")
        n = gm.shape[0]
        h = gm.spacing[0]
        S = np.concatenate([[0.0], np.cumsum(gm.weights)])
        pieces = []
        for s, e in _runs(V):
            br = np.unique(np.linspace(s, e + 1, self.n_breaks + 1).round().astype(int))
            pieces += [(a, b) for a, b in itertools.combinations(br, 2)]
        out = [(np.inf, None)] * len(eps_seq)
        ks = [int(math.floor(eps / h * (1 + 1e-9))) for eps in eps_seq]

        def union_mass(ivs):
            tot, cur_a, cur_b = 0.0, None, None
            for a, b in sorted(ivs):
                if cur_b is None or a > cur_b:
                    if cur_b is not None:
                        tot += S[cur_b] - S[cur_a]
                    cur_a, cur_b = a, b
                else:
                    cur_b = max(cur_b, b)
            return tot + S[cur_b] - S[cur_a]

        for parts in range(1, self.max_parts + 1):
            for combo in itertools.combinations(pieces, parts):
                srt = sorted(combo)
                if any(srt[q][1] >= srt[q + 1][0] for q in range(parts - 1)):
                    continue
                muA = union_mass(srt)
                if muA <= 0:
                    continue
                for t, (eps, k) in enumerate(zip(eps_seq, ks)):
                    muE = union_mass([(max(a - k, 0), min(b + k, n)) for a, b in srt])
                    r = (muE - muA) / (eps * muA)
                    if r < out[t][0]:
                        desc = "+".join(f"[{gm.lo[0] + a * h:.4g},{gm.lo[0] + b * h:.4g}]"
                                        for a, b in srt)
                        out[t] = (float(r), f"union{desc}")
        return out


class MaskFamily(Family):
    """Explicit candidate masks; dilation through the distance transform."""

    def __init__(self, name: str, masks: Sequence[np.ndarray], labels: Sequence[str]):
        if len(masks) == 0:
            raise ValueError("empty candidate family")
        self.name = name
        self.masks = list(masks)
        self.labels = list(labels)

    def infima(self, gm, V, eps_seq):
        out = [(np.inf, None)] * len(eps_seq)
        for m, lab in zip(self.masks, self.labels):
            A = m & V & gm.inside
            muA = float(gm.weights[A].sum())
            if muA <= 0:
                continue
            dist = gm.distance_to(A)
            for t, eps in enumerate(eps_seq):
                Ae = (dist <= eps * (1 + 1e-9)) & gm.inside
                r = (float(gm.weights[Ae].sum()) - muA) / (eps * muA)
                if r < out[t][0]:
                    out[t] = (r, lab)
        return out


def level_set_family(gm: GridMeasure, score, n_levels: int = 40, name="level_sets"):
    """Sub- and super-level sets of ``score`` (values or callable) at
    ``n_levels`` quantiles of its values on ``K``."""
    vals = np.asarray(score(gm.centers) if callable(score) else score, dtype=float)
    qs = np.quantile(vals[gm.inside], np.linspace(0, 1, n_levels + 2)[1:-1])
    masks, labels = [], []
    for q in qs:
        masks.append(vals <= q)
        labels.append(f"score<={q:.4g}")
        masks.append(vals >= q)
        labels.append(f"score>={q:.4g}")
    return MaskFamily(name, masks, labels)


def ball_family(gm: GridMeasure, centers, radii, name="balls"):
    masks, labels = [], []
    for c in np.atleast_2d(np.asarray(centers, dtype=float)):
        dist = np.linalg.norm(gm.centers - c, axis=1)
        for r in radii:
            masks.append(dist <= r)
            labels.append(f"ball({np.round(c, 4).tolist()},{r:.4g})")
    return MaskFamily(name, masks, labels)


class CombinedFamily(Family):
    def __init__(self, families: Sequence[Family]):
        if not families:
            raise ValueError("empty candidate family")
        self.families = list(families)
        self.name = "+".join(f.name for f in families)

    def infima(self, gm, V, eps_seq):
        best = [(np.inf, None)] * len(eps_seq)
        for fam in self.families:
            for t, cand in enumerate(fam.infima(gm, V, eps_seq)):
                if cand[0] < best[t][0]:
                    best[t] = cand
        return best


def default_family(gm: GridMeasure, score=None) -> Family:
    """Intervals in 1D; level sets of ``score`` (default ``f``) and balls in 2D."""
    if gm.dim == 1:
        return IntervalFamily()
    sc = gm.f_values if score is None else score
    lo, hi = gm.lo, gm.lo + gm.spacing * np.array(gm.shape)
    centers = np.stack(np.meshgrid(*[np.linspace(lo[i], hi[i], 7)[1:-1] for i in range(2)],
                                   indexing="ij"), -1).reshape(-1, 2)
    radii = np.linspace(0.05, 0.5, 6) * float(np.max(hi - lo))
    return CombinedFamily([level_set_family(gm, np.nan_to_num(sc, nan=np.inf)),
                           ball_family(gm, centers, radii)])


# ---------------------------------------------------------------------------
# brute-force estimate


@dataclass
class CheegerEstimate:
    value: float
    epsilons: np.ndarray
    infima: np.ndarray
    argmins: list
    family: str
    residual: float
    intercept: float
    method: str = "linear extrapolation in eps"

    def rows(self):
        return [{"epsilon": float(e), "inf_ratio": float(r), "argmin": a}
                for e, r, a in zip(self.epsilons, self.infima, self.argmins)]

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["epsilon", "inf_ratio", "argmin"])
            w.writeheader()
            w.writerows(self.rows())


def snap_eps(gm: GridMeasure, eps_seq=None):
    """Default ladder ``{0.08, 0.04, 0.02, 0.01} * diam`` rounded to whole
    multiples of the grid spacing (at least one cell)."""
    if eps_seq is None:
        eps_seq = [f * gm.space.diameter for f in DEFAULT_EPS_FRACTIONS]
    h = gm.h
    return np.array([max(1, round(e / h)) * h for e in eps_seq])


def cheeger_bruteforce(gm: GridMeasure, V, family: Optional[Family] = None,
                       eps_seq=None) -> CheegerEstimate:
    """Grid estimate of the restricted Cheeger constant of ``V``.

    ``V`` is a :class:`SetPredicate`, callable or mask. For each ``eps`` the
    ratio is minimized over ``family`` (default: :func:`default_family`), then
    the infima are extrapolated linearly to ``eps = 0``. The maximum absolute
    fit residual is reported as the estimator tolerance.
    """
    Vm = gm.mask(V)
    if not Vm.any():
        raise ValueError("V contains no grid cells")
    family = default_family(gm) if family is None else family
    eps = snap_eps(gm, eps_seq)
    res = family.infima(gm, Vm, eps)
    inf = np.array([r for r, _ in res])
    if not np.all(np.isfinite(inf)):
        raise ValueError("candidate family has no set of positive measure inside V")
    if len(eps) >= 2:
        slope, icpt = np.polyfit(eps, inf, 1)
        resid = float(np.max(np.abs(np.polyval([slope, icpt], eps) - inf)))
    else:
        icpt, resid = float(inf[0]), float("nan")
    return CheegerEstimate(value=max(float(icpt), 0.0), epsilons=eps, infima=inf,
                           argmins=[a for _, a in res], family=family.name,
                           residual=resid, intercept=float(icpt))


def positivity_bound(gm: GridMeasure, V, eps: float) -> float:
    """``exp(-2 B) * 2 (vol K - vol V_eps) / (D vol K)`` with ``B`` the range
    of ``f`` on the grid; a lower bound for convex ``K``."""
    Vm = gm.mask(V)
    B = float(np.nanmax(gm.f_values) - np.nanmin(gm.f_values))
    n_in = gm.inside.sum()
    frac_out = 1.0 - gm.dilate(Vm, eps).sum() / n_in
    return math.exp(-2 * B) * 2 * frac_out / gm.space.diameter


def stability_check(gm1: GridMeasure, gm2: GridMeasure, V, family: Optional[Family] = None,
                    eps_seq=None) -> dict:
    """Compare estimates for two objectives on the same grid against the
    ``exp(+-2 nu)`` sandwich, ``nu = max |f1 - f2|``.

    For each fixed set and ``eps`` the ratio itself moves by at most
    ``exp(2 nu)``, so the per-eps infima must satisfy the sandwich up to
    rounding; the extrapolated values get the sum of fit residuals as slack.
    """
    if not gm1.same_geometry(gm2):
        raise ValueError("grid measures do not share geometry")
    nu = float(np.max(np.abs(gm1.f_values[gm1.inside] - gm2.f_values[gm2.inside])))
    fam = family if family is not None else default_family(gm1)
    c1 = cheeger_bruteforce(gm1, V, fam, eps_seq)
    c2 = cheeger_bruteforce(gm2, V, fam, eps_seq)
    lo_f, hi_f = math.exp(-2 * nu), math.exp(2 * nu)
    rt = 1e-12
    per_eps = bool(np.all(c1.infima >= lo_f * c2.infima * (1 - rt))
                   and np.all(c1.infima <= hi_f * c2.infima * (1 + rt)))
    tol = c1.residual + c2.residual
    extrap = bool(lo_f * c2.value - tol <= c1.value <= hi_f * c2.value + tol)
    return {"nu": nu, "c1": c1.value, "c2": c2.value, "lower": lo_f * c2.value,
            "upper": hi_f * c2.value, "tolerance": tol,
            "margin_lower": c1.value - lo_f * c2.value, "margin_upper": hi_f * c2.value - c1.value,
            "per_eps_holds": per_eps, "extrapolated_holds": extrap,
            "holds": per_eps and extrap, "estimates": (c1, c2)}


def convex_mass_ratio(gm: GridMeasure, U) -> float:
    """``mu(K \\ U)`` under the grid measure (built for the scaled objective)."""
    Um = gm.mask(U)
    mu_u = float(gm.weights[Um].sum())
    if mu_u <= 0:
        raise ValueError("U has zero measure on the grid")
    return float(gm.weights[gm.inside & ~Um].sum())


def convex_xi_threshold(d: int, G: float, eps: float) -> float:
    """Inverse temperature ``2 d log(4 G / eps) / eps`` above which the
    ``eps``-optimal set of a convex ``G``-Lipschitz objective has mass >= 1/2."""
    return 2.0 * d * math.log(4.0 * G / eps) / eps


# ---------------------------------------------------------------------------
# vector fields


@dataclass(frozen=True)
class SmoothnessProfile:
    """Gradient bound ``G``, nuclear-norm Hessian bound ``L``, Hessian
    Lipschitz constant ``H`` and boundary width ``r0``."""

    G: float
    L: float
    H: Optional[float] = None
    r0: Optional[float] = None

    def __post_init__(self):
        for k in ("G", "L", "H", "r0"):
            v = getattr(self, k)
            if v is not None and not v > 0:
                raise ValueError(f"{k} must be positive")


@dataclass
class VectorField:
    """``phi`` maps ``(m, d)`` to ``(m, d)``; ``divergence`` may be omitted,
    in which case central differences with step ``h_div`` are used."""

    phi: Callable
    dim: int
    step_bound: float = 1e-3
    divergence: Optional[Callable] = None
    h_div: float = 1e-4
    name: str = "field"

    def __call__(self, X):
        return self.phi(np.atleast_2d(np.asarray(X, dtype=float)))

    def div(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.divergence is not None:
            return np.asarray(self.divergence(X), dtype=float)
        return fd_divergence(self.phi, X, self.h_div)


def fd_divergence(phi, X, h):
    X = np.atleast_2d(X)
    out = np.zeros(len(X))
    for i in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[i] = h
        out += (phi(X + e)[:, i] - phi(X - e)[:, i]) / (2 * h)
    return out


def check_field(field: VectorField, X, space: Optional[ParameterSpace] = None, tol=1e-12):
    """Raise naming the first sample where ``|phi| > 1`` or
    ``x - eps0 phi(x)`` leaves ``K``."""
    X = np.atleast_2d(X)
    P = field(X)
    norms = np.linalg.norm(P, axis=1)
    bad = np.flatnonzero(norms > 1 + tol)
    if bad.size:
        raise ValueError(f"field norm {norms[bad[0]]:.6g} > 1 at x={X[bad[0]].tolist()}")
    if space is not None:
        # K convex: the endpoint of the segment suffices
        ok = np.asarray(space.contains(X - field.step_bound * P), dtype=bool)
        bad = np.flatnonzero(~ok & np.asarray(space.contains(X), dtype=bool))
        if bad.size:
            raise ValueError(f"x - eps0*phi(x) leaves K at x={X[bad[0]].tolist()}")
    return P


def vectorfield_values(field: VectorField, f_grad, xi: float, X, space=None):
    """Pointwise ``<phi, xi grad f> - div phi`` after checking the field."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = check_field(field, X, space)
    return np.einsum("ij,ij->i", P, xi * f_grad(X)) - field.div(X)


def vectorfield_lower_bound(field: VectorField, f_grad, xi: float, V_samples, space=None) -> float:
    """Minimum over ``V_samples`` of ``<phi(x), xi grad f(x)> - div phi(x)``."""
    return float(np.min(vectorfield_values(field, f_grad, xi, V_samples, space)))


def gradient_field(f, profile: SmoothnessProfile, step_bound: float = 1e-3,
                   h_div: float = 1e-4) -> VectorField:
    """``phi = grad f / G``, divergence ``tr(hess f) / G``."""
    if f.grad is None:
        raise ValueError(f"{f.name} has no gradient")
    G = profile.G
    grad, hess = f.grad, f.hess

    def phi(X):
        return grad(X) / G

    div = None
    if hess is not None:
        def div(X):
            return np.trace(hess(X), axis1=-2, axis2=-1) / G

    return VectorField(phi, f.dim, step_bound, div, h_div, f"grad/{G:g}")


def matrix_phi(A, tol: float = 1e-10):
    """Standard normal CDF applied to the eigenvalues of symmetric ``A``
    (batched over leading axes)."""
    A = np.asarray(A, dtype=float)
    if A.shape[-1] != A.shape[-2]:
        raise ValueError("matrix must be square")
    asym = np.max(np.abs(A - np.swapaxes(A, -1, -2))) if A.size else 0.0
    if asym > tol:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    lam, Q = np.linalg.eigh(A)
    return (Q * ndtr(lam)[..., None, :]) @ np.swapaxes(Q, -1, -2)


def saddle_sigma(L: float, eps: float) -> float:
    arg = 4.0 * L / math.sqrt(eps)
    if arg <= 1.0:
        raise ValueError("need 4 L / sqrt(eps) > 1")
    return 1.0 / (2.0 * math.sqrt(math.log(arg)))


def saddle_field(f, epsilon: float, profile: SmoothnessProfile, sigma_sad: Optional[float] = None,
                 h_div: float = 1e-4, step_bound: float = 1e-3) -> VectorField:
    """Field that pushes away from strict saddles.

    ``phi = (2 sqrt(G |grad f|) I + Phi((-sqrt(eps) I - hess f) / (s sqrt(eps)))) grad f
    / ((2G + 1) G)`` where ``Phi`` is :func:`matrix_phi`. Its divergence is
    taken by central differences.
    """
    if f.grad is None or f.hess is None:
        raise ValueError(f"{f.name} needs both gradient and Hessian")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    G = profile.G
    s = saddle_sigma(profile.L, epsilon) if sigma_sad is None else float(sigma_sad)
    se = math.sqrt(epsilon)
    d = f.dim
    eye = np.eye(d)

    def phi(X):
        g = f.grad(X)
        H = f.hess(X)
        gn = np.linalg.norm(g, axis=-1)
        M = matrix_phi((-se * eye - H) / (s * se))
        A = 2.0 * np.sqrt(G * gn)[..., None, None] * eye + M
        return np.einsum("...ij,...j->...i", A, g) / ((2 * G + 1) * G)

    return VectorField(phi, d, step_bound, None, h_div, "saddle")
