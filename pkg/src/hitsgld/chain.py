"""Lazy Metropolis-Hastings validation chain and its auxiliary variant.

The chain targets ``mu ~ exp(-xi f)`` with proposal

    y = x             with probability 1/2
    y ~ N(x - s g(x), 2 s I)   otherwise,

where ``s = eta / xi`` and ``g = xi grad f``. Gaussian candidates outside
``K`` or farther than ``4 sqrt(2 s d)`` from ``x`` are rejected. Gradients are
exact, so the proposal density is available in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .cheeger import SetPredicate
from .sgld import SgldConfig, TargetSet, sgld_step

_BLOCK = 65536


@dataclass(frozen=True)
class MhConfig:
    eta: float
    xi: float = 1.0
    k_steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not (self.eta > 0 and self.xi > 0):
            raise ValueError("eta and xi must be positive")
        if self.k_steps < 0:
            raise ValueError("k_steps must be non-negative")

    @property
    def step(self) -> float:
        """Effective stepsize ``eta / xi`` of the chain on ``xi f``."""
        return self.eta / self.xi

    def ball_bound(self, d: int) -> float:
        return 4.0 * math.sqrt(2.0 * self.step * d)

    @classmethod
    def from_step(cls, step: float, xi: float = 1.0, **kw) -> "MhConfig":
        return cls(eta=step * xi, xi=xi, **kw)


def _log_q(x, y, gx, s):
    """Log Gaussian proposal density without the 1/2 branch weight."""
    diff = y - x + s * gx
    d = diff.shape[-1]
    return -np.sum(diff * diff, axis=-1) / (4.0 * s) - 0.5 * d * math.log(4.0 * math.pi * s)


def proposal_density(x, y, f_grad, cfg: MhConfig):
    """Return ``(density, point_mass)`` of the lazy proposal from ``x`` at ``y``.

    ``density`` is the continuous part ``1/2 N(y; x - s g(x), 2 s I)`` and
    ``point_mass`` is 1/2 when ``y == x`` and 0 otherwise.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    s = cfg.step
    gx = cfg.xi * f_grad(x)
    dens = 0.5 * math.exp(float(_log_q(x, y, gx, s)))
    return dens, (0.5 if np.array_equal(x, y) else 0.0)


def _admissible(x, y, space, cfg):
    d = x.shape[-1]
    r = cfg.ball_bound(d)
    diff = y - x
    return (np.asarray(space.contains(y), dtype=bool)
            & (np.sum(diff * diff, axis=-1) <= r * r))


def log_acceptance(x, y, f, f_grad, cfg: MhConfig):
    """Vectorized log of the Metropolis-Hastings ratio, clipped at 0."""
    s, xi = cfg.step, cfg.xi
    gx = xi * f_grad(x)
    gy = xi * f_grad(y)
    lr = _log_q(y, x, gy, s) - _log_q(x, y, gx, s) + xi * (f(x) - f(y))
    return np.minimum(lr, 0.0)


def acceptance_prob(x, y, f, f_grad, space, cfg: MhConfig) -> float:
    """``min{1, q_y(x) / q_x(y) * exp(xi f(x) - xi f(y))}``; 0 when ``y``
    equals ``x``, leaves ``K`` or lies outside the proposal ball."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.array_equal(x, y) or not bool(_admissible(x, y, space, cfg)):
        return 0.0
    return float(math.exp(float(log_acceptance(x[None], y[None], f, f_grad, cfg)[0])))


@dataclass
class ChainRun:
    """States after each step (``samples[0]`` is the first move, not ``x0``)."""

    x0: np.ndarray
    samples: np.ndarray
    gaussian_branch: np.ndarray
    accepted: np.ndarray
    hitting: Optional[int] = None

    def __len__(self):
        return len(self.samples)


def _chain(f, f_grad, space, cfg, k, x0, absorb: Optional[TargetSet]):
    init_ss, step_ss = np.random.SeedSequence(int(cfg.seed)).spawn(2)
    d = space.dim
    if x0 is None:
        x = space.sample_uniform(np.random.default_rng(init_ss))
    else:
        x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
        if not space.contains(x):
            raise ValueError("initial point is outside the parameter space")
    rng = np.random.default_rng(step_ss)
    s, xi = cfg.step, cfg.xi
    sq = math.sqrt(2.0 * s)
    r2 = cfg.ball_bound(d) ** 2
    out = np.empty((k, d))
    branch = np.zeros(k, dtype=bool)
    acc = np.zeros(k, dtype=bool)
    x0_arr = x.copy()
    fx = float(f(x[None])[0])
    gx = xi * f_grad(x[None])[0]
    in_u = bool(absorb.hit(x[None])[0]) if absorb is not None else False
    hitting = 0 if in_u else None
    k_done = 0
    while k_done < k:
        if absorb is not None and in_u:
            # absorbed: the chain never moves again
            out[k_done:] = x
            break
        blk = min(_BLOCK, k - k_done)
        coin = rng.random(blk) < 0.5
        W = rng.standard_normal((blk, d))
        U = rng.random(blk)
        for j in range(blk):
            t = k_done + j
            if coin[j]:
                branch[t] = True
                y = x - s * gx + sq * W[j]
                diff = y - x
                ok = float(diff @ diff) <= r2 and space._contains(y)
                if ok:
                    if absorb is not None:
                        ok = not in_u
                        if ok:
                            fy = float(f(y[None])[0])
                            gy = xi * f_grad(y[None])[0]
                    else:
                        fy = float(f(y[None])[0])
                        gy = xi * f_grad(y[None])[0]
                        back = x - y + s * gy
                        fwd = diff + s * gx
                        lr = (float(fwd @ fwd) - float(back @ back)) / (4.0 * s) + xi * (fx - fy)
                        ok = lr >= 0.0 or U[j] < math.exp(lr)
                if ok:
                    x, fx, gx = y, fy, gy
                    acc[t] = True
                    if absorb is not None and hitting is None:
                        in_u = bool(absorb.hit(x[None])[0])
                        if in_u:
                            hitting = t + 1
            out[t] = x
            if in_u and absorb is not None:
                k_done = t + 1
                break
        else:
            k_done += blk
    return ChainRun(x0_arr, out, branch, acc, hitting)


def mh_run(f, f_grad, space, cfg: MhConfig, k: Optional[int] = None, x0=None) -> ChainRun:
    """Simulate the lazy Metropolis-Hastings chain for ``k`` steps
    (default ``cfg.k_steps``) from a uniform start or ``x0``."""
    return _chain(f, f_grad, space, cfg, cfg.k_steps if k is None else int(k), x0, None)


def aux_run(f, f_grad, space, cfg: MhConfig, U_rho: TargetSet, k: Optional[int] = None,
            x0=None) -> ChainRun:
    """Auxiliary chain: same proposal, accepts every admissible candidate
    while outside ``U_rho`` and never moves once inside."""
    return _chain(f, f_grad, space, cfg, cfg.k_steps if k is None else int(k), x0, U_rho)


# ---------------------------------------------------------------------------
# discretized kernel


@dataclass
class KernelMatrix:
    states: np.ndarray
    width: float
    P: np.ndarray
    Q: np.ndarray
    residual: float
    iterations: int

    def row_sums(self):
        return self.P.sum(axis=1)

    def detailed_balance_error(self) -> float:
        """Max relative asymmetry of ``Q_i P_ij``."""
        F = self.Q[:, None] * self.P
        scale = np.maximum(np.abs(F), np.abs(F.T))
        rel = np.where(scale > 0, np.abs(F - F.T) / np.where(scale > 0, scale, 1.0), 0.0)
        return float(rel.max())

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.states, self.Q, np.diag(self.P)]),
                   delimiter=",", header="state,stationary,diagonal", comments="")


def build_kernel_1d(f, f_grad, space, cfg: MhConfig, n_states: int, tol: float = 1e-10,
                    max_squarings: int = 200) -> KernelMatrix:
    """Midpoint-rule discretization of the chain on ``n_states`` equal cells.

    Off-diagonal entries are ``1/2 q(c_i -> c_j) h alpha(c_i, c_j)`` for
    admissible pairs; rejected and out-of-ball mass goes on the diagonal.
    The stationary vector comes from power iteration, accelerated by
    repeated squaring of the kernel.
    """
    if space.dim != 1:
        raise ValueError("kernel discretization is 1D only")
    if not 2 <= n_states <= 2000:
        raise ValueError("n_states must lie in [2, 2000]")
    from .cheeger import _bounding_box

    lo, hi = _bounding_box(space)
    h = float(hi[0] - lo[0]) / n_states
    c = lo[0] + (np.arange(n_states) + 0.5) * h
    X = c[:, None]
    inside = np.asarray(space.contains(X), dtype=bool)
    c, X = c[inside], X[inside]
    n = len(c)
    s, xi = cfg.step, cfg.xi
    fv = xi * np.asarray(f(X), dtype=float)
    gv = xi * np.asarray(f_grad(X), dtype=float)[:, 0]
    # log q(c_i -> c_j) for the Gaussian branch
    diff = c[None, :] - c[:, None] + s * gv[:, None]
    logq = -diff**2 / (4 * s) - 0.5 * math.log(4 * math.pi * s)
    admissible = np.abs(c[None, :] - c[:, None]) <= cfg.ball_bound(1)
    log_ratio = logq.T - logq + (fv[:, None] - fv[None, :])
    alpha = np.exp(np.minimum(log_ratio, 0.0))
    P = np.where(admissible, 0.5 * np.exp(logq) * h * alpha, 0.0)
    np.fill_diagonal(P, 0.0)
    off = P.sum(axis=1)
    if not np.all(np.isfinite(P)) or np.any(off > 0.5 + 1e-9):
        raise ValueError("quadrature failed: off-diagonal mass exceeds the lazy half")
    P[np.diag_indices(n)] = 1.0 - off

    Q = np.full(n, 1.0 / n)
    M = P.copy()
    it = 0
    resid = np.inf
    while it < max_squarings:
        Q_new = Q @ M
        Q_new /= Q_new.sum()
        resid = float(np.abs(Q_new @ P - Q_new).max())
        change = float(np.max(np.abs(Q_new - Q) / Q_new))
        Q = Q_new
        it += 1
        # a small residual alone can hide slow modes; also wait for Q to settle
        if resid <= tol and change <= 1e-13:
            break
        M = M @ M
    if resid > tol:
        raise ValueError(f"power iteration did not converge (residual {resid:.2e})")
    return KernelMatrix(c, h, P, Q, resid, it)


def interval_conductance(km: KernelMatrix, V_mask: np.ndarray):
    """Minimum escape ratio over every interval of states inside ``V``.

    Returns ``(value, (i, j))`` with inclusive state indices.
    """
    n = len(km.states)
    F = km.Q[:, None] * km.P
    S = np.zeros((n + 1, n + 1))
    S[1:, 1:] = F.cumsum(0).cumsum(1)
    cQ = np.concatenate([[0.0], np.cumsum(km.Q)])
    best, arg = np.inf, None
    m = np.concatenate([[False], V_mask, [False]]).astype(np.int8)
    dm = np.diff(m)
    for a, b in zip(np.flatnonzero(dm == 1), np.flatnonzero(dm == -1) - 1):
        idx = np.arange(a, b + 1)
        i, j = np.meshgrid(idx, idx, indexing="ij")
        valid = j >= i
        qA = cQ[j + 1] - cQ[i]
        inner = S[j + 1, j + 1] - S[i, j + 1] - S[j + 1, i] + S[i, i]
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(valid & (qA > 0), (qA - inner) / qA, np.inf)
        k = int(np.argmin(ratio))
        if ratio.flat[k] < best:
            best, arg = float(ratio.flat[k]), (int(i.flat[k]), int(j.flat[k]))
    return best, arg


def conductance_estimate(km: KernelMatrix, V, family=None) -> float:
    """Restricted conductance ``min_A sum_{x in A} Q(x) P(x, K \\ A) / Q(A)``.

    ``family`` is a list of boolean state masks (each inside ``V``); by
    default all intervals of states inside ``V`` are searched.
    """
    if isinstance(V, SetPredicate) or callable(V):
        Vm = np.asarray(V(km.states[:, None]), dtype=bool)
    else:
        Vm = np.asarray(V, dtype=bool)
    if family is None:
        if not Vm.any():
            raise ValueError("empty candidate family")
        return interval_conductance(km, Vm)[0]
    family = list(family)
    if not family:
        raise ValueError("empty candidate family")
    best = np.inf
    for A in family:
        A = np.asarray(A, dtype=bool)
        if np.any(A & ~Vm):
            raise ValueError("candidate set is not inside V")
        qA = km.Q[A].sum()
        if qA <= 0:
            continue
        flow = float(km.Q[A] @ km.P[np.ix_(A, ~A)].sum(axis=1))
        best = min(best, flow / qA)
    if not np.isfinite(best):
        raise ValueError("no candidate with positive stationary mass")
    return best


def conductance_lower_bound(step: float, d: int, cheeger: float) -> float:
    """``(1/192) (1 - exp(-sqrt(step / d) C / 4))``."""
    return (1.0 - math.exp(-0.25 * math.sqrt(step / d) * cheeger)) / 192.0


def step_precondition(h_max: float, d: int, rho: float, b_max: float, G: float, L: float) -> float:
    """Largest step in ``min{h_max, 16 d rho^2, b_max^2/(32 d), 1/(100 d (G^2 + L))}``."""
    return min(h_max, 16 * d * rho**2, b_max**2 / (32 * d), 1.0 / (100 * d * (G * G + L)))


# ---------------------------------------------------------------------------
# closeness of the two chains


def closeness_delta(step: float, d: int, G: float, L: float) -> float:
    return math.exp(33.0 * step * d * (G * G + L)) - 1.0


def sample_admissible_pairs(f_grad, space, cfg: MhConfig, n: int, rng, exclude=None):
    """``n`` pairs ``(x, y)`` with ``x`` uniform on ``K`` (outside ``exclude``)
    and ``y`` a Gaussian-branch candidate that is admissible and ``!= x``."""
    d = space.dim
    xs, ys = [], []
    got = 0
    s = cfg.step
    while got < n:
        m = 2 * (n - got) + 16
        X = space.sample_uniform(rng, m)
        if exclude is not None:
            X = X[~np.asarray(exclude.hit(X), dtype=bool)]
        Y = X - s * cfg.xi * f_grad(X) + math.sqrt(2 * s) * rng.standard_normal((len(X), d))
        ok = _admissible(X, Y, space, cfg) & np.any(X != Y, axis=1)
        xs.append(X[ok])
        ys.append(Y[ok])
        got += int(ok.sum())
    return np.concatenate(xs)[:n], np.concatenate(ys)[:n]


@dataclass
class ClosenessReport:
    min_acceptance: float
    acceptance_bound: float
    delta_empirical: float
    delta_bound: float
    lower_violations: int
    upper_violations: int
    n_pairs: int
    n_checks: int
    details: dict

    @property
    def holds(self) -> bool:
        return (self.min_acceptance >= self.acceptance_bound and self.lower_violations == 0
                and self.upper_violations == 0)


def closeness_report(f, f_grad, space, cfg: MhConfig, U: TargetSet, G: float, L: float,
                     n_pairs: int = 10_000, n_states: int = 20, n_paired: int = 20_000,
                     rng=None) -> ClosenessReport:
    """Empirical check of the two-sided closeness of the auxiliary chain.

    * acceptance ratios over ``n_pairs`` admissible pairs against
      ``exp(-33 s d (G^2 + L))``;
    * for ``n_states`` off-``U`` states and every cell ``A`` of a partition of
      the proposal ball, ``pi(x, A) <= pi~(x, A) <= (1 + delta) pi(x, A)``
      from paired simulation (shared candidates, binomial confidence 3 se).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    d = space.dim
    s = cfg.step
    X, Y = sample_admissible_pairs(f_grad, space, cfg, n_pairs, rng, exclude=U)
    acc = np.exp(log_acceptance(X, Y, f, f_grad, cfg))
    a_bound = math.exp(-33.0 * s * d * (G * G + L))
    delta_b = closeness_delta(s, d, G, L)

    r = cfg.ball_bound(d)
    lower_v = upper_v = checks = 0
    delta_emp = 0.0
    starts = space.sample_uniform(rng, 4 * n_states)
    starts = starts[~np.asarray(U.hit(starts), dtype=bool)][:n_states]
    edges = np.linspace(-r, r, 9)
    for x in starts:
        coin = rng.random(n_paired) < 0.5
        y = x - s * cfg.xi * f_grad(x[None])[0] + math.sqrt(2 * s) * rng.standard_normal((n_paired, d))
        adm = coin & _admissible(np.broadcast_to(x, y.shape), y, space, cfg) & np.any(y != x, axis=1)
        a = np.zeros(n_paired)
        if adm.any():
            a[adm] = np.exp(log_acceptance(np.broadcast_to(x, y[adm].shape), y[adm], f, f_grad, cfg))
        moved_pi = adm & (rng.random(n_paired) < a)
        moved_aux = adm
        # cells: bins of the first displacement coordinate inside the ball
        cell = np.digitize((y - x)[:, 0], edges) - 1
        for c in range(len(edges) - 1):
            in_c = cell == c
            a_pi = (moved_pi & in_c).astype(float)
            a_aux = (moved_aux & in_c).astype(float)
            p, pt = a_pi.mean(), a_aux.mean()
            if pt == 0:
                continue
            checks += 1
            if p > pt:
                lower_v += 1
            z = a_aux - (1 + delta_b) * a_pi
            if z.mean() > 3 * z.std(ddof=1) / math.sqrt(n_paired):
                upper_v += 1
            if p > 0:
                delta_emp = max(delta_emp, pt / p - 1)
    return ClosenessReport(float(acc.min()), a_bound, delta_emp, delta_b, lower_v, upper_v,
                           n_pairs, checks, {"mean_acceptance": float(acc.mean())})


def quadrature_closeness(f, f_grad, space, cfg: MhConfig, U: TargetSet, n_states=400):
    """Kernel-based ``max (pi~(x, A) / pi(x, A) - 1)`` over states outside ``U``
    and single-cell sets ``A``; exact up to quadrature."""
    km = build_kernel_1d(f, f_grad, space, cfg, n_states)
    outside = ~np.asarray(U.hit(km.states[:, None]), dtype=bool)
    c = km.states
    s, xi = cfg.step, cfg.xi
    gv = xi * np.asarray(f_grad(c[:, None]), dtype=float)[:, 0]
    diff = c[None, :] - c[:, None] + s * gv[:, None]
    q = 0.5 * np.exp(-diff**2 / (4 * s)) / math.sqrt(4 * math.pi * s) * km.width
    adm = np.abs(c[None, :] - c[:, None]) <= cfg.ball_bound(1)
    np.fill_diagonal(adm, False)
    aux = np.where(adm, q, 0.0)
    pi = np.where(adm, km.P, 0.0)
    sel = outside[:, None] & adm & (pi > 0)
    ratio = aux[sel] / pi[sel]
    return {"delta": float(ratio.max() - 1.0) if ratio.size else 0.0,
            "lower_holds": bool(np.all(pi[outside] <= aux[outside] * (1 + 1e-12)))}


def subsequence_ks(f, f_grad, space, cfg: MhConfig, x, n: int, rng):
    """Two-sample KS test between one-step displacements of the auxiliary
    chain's Gaussian branch and of SGLD with ``(xi, eta)`` on ``f``.

    Both start from ``x`` outside the absorbing set; returns the scipy result.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = space.dim
    s = cfg.step
    # auxiliary chain: keep only Gaussian-branch steps
    aux = []
    while len(aux) < n:
        coin = rng.random(2 * n) < 0.5
        W = rng.standard_normal((2 * n, d))[coin]
        Y = x - s * cfg.xi * f_grad(x[None])[0] + math.sqrt(2 * s) * W
        ok = _admissible(np.broadcast_to(x, Y.shape), Y, space, cfg)
        aux.extend(np.where(ok[:, None], Y, x)[:, 0] - x[0])
    aux = np.array(aux[:n])
    sc = SgldConfig(xi=cfg.xi, eta=cfg.eta, k_max=1)
    g = f_grad(x[None])[0]
    W = rng.standard_normal((n, d))
    sg = np.array([sgld_step(x, g, w, sc, space)[0] - x[0] for w in W])
    return stats.ks_2samp(aux, sg)


def chi_square_tail_check(d: int, x_param: float, m: int, rng) -> dict:
    """Monte Carlo tails of a chi-square with ``d`` degrees of freedom
    against ``exp(-x d)`` at ``d(1 + 2 sqrt(x) + 2x)`` and ``d(1 - 2 sqrt(x))``."""
    if d < 1 or not x_param > 0:
        raise ValueError("need d >= 1 and x > 0")
    X = rng.chisquare(d, size=m)
    bound = math.exp(-x_param * d)
    up_t = d * (1 + 2 * math.sqrt(x_param) + 2 * x_param)
    lo_t = d * (1 - 2 * math.sqrt(x_param))
    p_up = float(np.mean(X >= up_t))
    p_lo = float(np.mean(X <= lo_t))
    ci = 3 * math.sqrt(max(bound * (1 - bound), 1.0 / m) / m)
    return {"upper_threshold": up_t, "upper_tail": p_up, "lower_threshold": lo_t,
            "lower_tail": p_lo, "bound": bound, "ci": ci,
            "holds": p_up <= bound + ci and p_lo <= bound + ci}
