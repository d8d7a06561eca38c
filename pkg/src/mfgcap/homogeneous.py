"""Homogeneous producers: forward-backward ODE system for (X, u).

Total capacity ``X`` runs forward from ``X0``; the costate ``u`` (marginal
value of one MW, $/MW) must vanish at the horizon. :func:`shoot` finds the
initial costate by bisection, which is valid because ``u0 -> u_T`` is
strictly increasing. :func:`semi_explicit_linear` evaluates the closed-form
linear-price solution used as an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BracketError, ConvergenceError, DivergenceError, GridError, PreconditionError
from .model import LinearPrice, ModelParams, PriceFunction, check_assumption
from .numerics import bisect, grid_step, linear_crossing, uniform_grid


@dataclass
class HomogeneousSolution:
    grid: np.ndarray
    X: np.ndarray
    u: np.ndarray
    K: np.ndarray
    t_star: float
    u0: float
    residual: float = 0.0
    restarts: list[float] = field(default_factory=list)
    method: str = "shooting"


@dataclass(frozen=True)
class SemiExplicitCoeffs:
    theta: float
    r1: float
    r2: float
    Cc: float
    Dd: float
    t_star: float


def _rk4_path(params: ModelParams, pf: PriceFunction, X0: float, u0: float,
              dt: float, n: int, t0: float = 0.0):
    """Fixed-step RK4 on the forward system; returns (X, u) lists of n+1 nodes."""
    delta, alpha, rd = params.delta, params.alpha, params.r + params.delta
    inv_beta, c, h = 1.0 / params.beta, params.c, params.h

    def rhs(X, u):
        k = u - alpha
        return -delta * X + (inv_beta * k if k > 0 else 0.0), rd * u - (pf(X) - c) * h

    X, u = float(X0), float(u0)
    Xs, us = [X], [u]
    for i in range(n):
        a1, b1 = rhs(X, u)
        a2, b2 = rhs(X + 0.5 * dt * a1, u + 0.5 * dt * b1)
        a3, b3 = rhs(X + 0.5 * dt * a2, u + 0.5 * dt * b2)
        a4, b4 = rhs(X + dt * a3, u + dt * b3)
        X = X + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        u = u + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
        if not (math.isfinite(X) and math.isfinite(u)):
            raise DivergenceError(f"forward system blew up at t = {t0 + (i + 1) * dt:.6g}",
                                  time=t0 + (i + 1) * dt)
        Xs.append(X)
        us.append(u)
    return Xs, us


def integrate_forward(params: ModelParams, pf: PriceFunction, u0: float, grid):
    """Integrate X' = -δX + (u-α)⁺/β, u' = (r+δ)u - (P(X)-c)h from (X0, u0).

    Classical RK4 on the given uniform grid with the positive part evaluated
    inside every stage. Returns ``(X, u)`` arrays on the grid.
    """
    grid = np.asarray(grid, dtype=float)
    dt = grid_step(grid)
    if dt > (grid[-1] - grid[0]) / 100 * (1 + 1e-12):
        raise GridError("forward integration needs at least 100 steps", required_n_t=100)
    if params.X0 <= 0 and not isinstance(pf, LinearPrice):
        raise PreconditionError("inverse price needs X0 > 0")
    X, u = _rk4_path(params, pf, params.X0, u0, dt, grid.size - 1, float(grid[0]))
    return np.asarray(X), np.asarray(u)


def _uninstalled_integrals(params: ModelParams, pf: PriceFunction, X_start: float, tau: np.ndarray):
    """h ∫_0^t e^{-(r+δ)s}(P(X_start e^{-δs}) - c) ds on the nodes ``tau`` (trapezoid)."""
    g = np.exp(-(params.r + params.delta) * tau) * (pf(X_start * np.exp(-params.delta * tau)) - params.c)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(tau))])
    return params.h * cum


def shooting_bracket(params: ModelParams, pf: PriceFunction, X_start: float, tau: np.ndarray):
    """Bracket for the initial costate, widened by one unit on each side."""
    cum = _uninstalled_integrals(params, pf, X_start, tau)
    return float(cum.min()) - 1.0, float(cum[-1]) + 1.0


def _terminal_costate(params, pf, X_start, u0, dt, n, t0):
    try:
        _, us = _rk4_path(params, pf, X_start, u0, dt, n, t0)
        return us[-1]
    except DivergenceError:
        # a blown-up costate only tells us its sign; larger u0 -> larger u_T
        return math.inf if u0 > params.alpha else -math.inf


def _bisect_segment(params, pf, X_start, dt, n, t0, tol, max_iter):
    """Bisection on the costate at ``t0``. Returns (lo, hi, u_lo_T, u_hi_T, iterations)."""
    tau = np.linspace(0.0, n * dt, n + 1)
    lo, hi = shooting_bracket(params, pf, X_start, tau)
    f_lo = _terminal_costate(params, pf, X_start, lo, dt, n, t0)
    f_hi = _terminal_costate(params, pf, X_start, hi, dt, n, t0)
    if not (f_lo < 0 < f_hi):
        if abs(f_lo) <= tol:
            return lo, lo, f_lo, f_lo, 0
        if abs(f_hi) <= tol:
            return hi, hi, f_hi, f_hi, 0
        raise BracketError(
            f"shooting bracket [{lo:.6g}, {hi:.6g}] does not change sign "
            f"(u_T = {f_lo:.6g}, {f_hi:.6g})")
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            return lo, hi, f_lo, f_hi, it
        f_mid = _terminal_costate(params, pf, X_start, mid, dt, n, t0)
        if abs(f_mid) <= tol:
            return mid, mid, f_mid, f_mid, it
        if f_mid < 0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    raise ConvergenceError(f"shooting did not converge in {max_iter} iterations",
                           residual=min(abs(f_lo), abs(f_hi)))


def _crossing_time(grid: np.ndarray, u: np.ndarray, alpha: float) -> float:
    """Time after which u stays at or below alpha (0 if it never exceeds alpha)."""
    above = np.nonzero(u > alpha)[0]
    if above.size == 0:
        return 0.0
    k = int(above[-1])
    if k == grid.size - 1:
        return float(grid[-1])
    return linear_crossing(grid, u - alpha, k)


def shoot(params: ModelParams, pf: PriceFunction, grid=None, tol: float | None = None,
          max_iter: int = 200, agree_rtol: float = 1e-7) -> HomogeneousSolution:
    """Solve the forward-backward system by bisection on the initial costate.

    Long horizons put the installation phase on a saddle whose unstable rate
    amplifies any error in ``u0`` exponentially; once the bisection bracket
    collapses to adjacent floats without meeting ``tol``, the trajectory is
    kept only where the two bracket trajectories still agree, and the
    bisection restarts from that node with the (accurate) capacity found there.
    Each restart is the same monotone problem on a shorter horizon.
    """
    if grid is None:
        grid = uniform_grid(params.T, 2000)
    grid = np.asarray(grid, dtype=float)
    dt = grid_step(grid)
    if tol is None:
        tol = 1e-6 * params.alpha
    if tol <= 0:
        raise ValueError("tol must be positive")
    n_total = grid.size - 1
    k0 = 0
    X_start = float(params.X0)
    Xs: list[float] = []
    us: list[float] = []
    restarts: list[float] = []
    u0_first = None
    while True:
        n = n_total - k0
        lo, hi, f_lo, f_hi, _ = _bisect_segment(params, pf, X_start, dt, n, float(grid[k0]),
                                                tol, max_iter)
        if u0_first is None:
            u0_first = lo if abs(f_lo) <= abs(f_hi) else hi
        if min(abs(f_lo), abs(f_hi)) <= tol or n <= 1:
            u_seg = lo if abs(f_lo) <= abs(f_hi) else hi
            Xp, up = _rk4_path(params, pf, X_start, u_seg, dt, n, float(grid[k0]))
            Xs.extend(Xp)
            us.extend(up)
            residual = abs(up[-1])
            break
        X_lo, u_lo = _rk4_path(params, pf, X_start, lo, dt, n, float(grid[k0]))
        X_hi, u_hi = _rk4_path(params, pf, X_start, hi, dt, n, float(grid[k0]))
        X_lo, X_hi = np.asarray(X_lo), np.asarray(X_hi)
        split = np.abs(X_hi - X_lo) > agree_rtol * max(X_start, 1.0)
        split |= np.abs(np.asarray(u_hi) - np.asarray(u_lo)) > agree_rtol * params.alpha
        k_split = int(np.argmax(split)) if split.any() else n
        keep = max(k_split // 2, 1)
        Xs.extend(X_lo[:keep].tolist())
        us.extend(u_lo[:keep])
        k0 += keep
        X_start = float(X_lo[keep])
        restarts.append(float(grid[k0]))
    X = np.asarray(Xs)
    u = np.asarray(us)
    K = np.maximum(u - params.alpha, 0.0) / params.beta
    return HomogeneousSolution(grid=grid, X=X, u=u, K=K,
                               t_star=_crossing_time(grid, u, params.alpha),
                               u0=float(u[0]), residual=float(residual), restarts=restarts)


# --------------------------------------------------------------------------
# linear price: semi-explicit solution

def _linear_roots(params: ModelParams, pf: LinearPrice):
    k = (params.r + params.delta) * params.delta + params.h * pf.d2 / params.beta
    disc = math.sqrt(params.r ** 2 + 4 * k)
    return 0.5 * (params.r + disc), 0.5 * (params.r - disc)


def _theta(params: ModelParams, pf: LinearPrice) -> float:
    rd = params.r + params.delta
    return ((params.h * (pf.d1 - params.c) - rd * params.alpha)
            / (params.beta * rd * params.delta + params.h * pf.d2))


def _cd(params, pf, t_star, theta, r1, r2):
    # from X(0) = X0 and δ X(T*) + X'(T*) = 0
    delta = params.delta
    num = (params.X0 - theta) * (r2 + delta) + delta * theta * math.exp(-r2 * t_star)
    den = (r2 + delta) - (r1 + delta) * math.exp((r1 - r2) * t_star)
    C = num / den
    return C, params.X0 - C - theta


def t_star_residual(params: ModelParams, pf: LinearPrice, t_star: float) -> float:
    """Value of a marginal MW at ``t_star`` (no later installation) minus alpha."""
    theta = _theta(params, pf)
    r1, r2 = _linear_roots(params, pf)
    C, D = _cd(params, pf, t_star, theta, r1, r2)
    rd, r2d = params.r + params.delta, params.r + 2 * params.delta
    tau = params.T - t_star
    X_ts = C * math.exp(r1 * t_star) + D * math.exp(r2 * t_star) + theta
    value = (params.h * (pf.d1 - params.c) / rd * (1 - math.exp(-rd * tau))
             - params.h * pf.d2 / r2d * (1 - math.exp(-r2d * tau)) * X_ts)
    return value - params.alpha


def semi_explicit_linear(params: ModelParams, pf: LinearPrice, grid=None):
    """Closed-form X path for a linear price, with T* from its scalar equation."""
    if not isinstance(pf, LinearPrice):
        raise PreconditionError("semi-explicit solution needs a linear price")
    chk = check_assumption(params, pf)
    if not chk.holds:
        raise PreconditionError("installation is never profitable for these parameters "
                                "(non-triviality assumption fails)")
    if grid is None:
        grid = uniform_grid(params.T, 2000)
    grid = np.asarray(grid, dtype=float)
    T = params.T
    eps = 1e-12 * T
    ftol = 1e-9 * params.alpha
    ts = bisect(lambda s: t_star_residual(params, pf, s), eps, T - eps, ftol=ftol,
                max_iter=400, what="T* equation")
    theta = _theta(params, pf)
    r1, r2 = _linear_roots(params, pf)
    C, D = _cd(params, pf, ts, theta, r1, r2)
    coeffs = SemiExplicitCoeffs(theta=theta, r1=r1, r2=r2, Cc=C, Dd=D, t_star=ts)

    before = grid <= ts
    X = np.empty_like(grid)
    tb = grid[before]
    X[before] = C * np.exp(r1 * tb) + D * np.exp(r2 * tb) + theta
    X_ts = C * math.exp(r1 * ts) + D * math.exp(r2 * ts) + theta
    X[~before] = X_ts * np.exp(-params.delta * (grid[~before] - ts))
    # u = α + β(X' + δX) while installing; the uninstalled tail value afterwards
    u = np.empty_like(grid)
    Xdot = C * r1 * np.exp(r1 * tb) + D * r2 * np.exp(r2 * tb)
    u[before] = params.alpha + params.beta * (Xdot + params.delta * X[before])
    rd, r2d = params.r + params.delta, params.r + 2 * params.delta
    tau = T - grid[~before]
    u[~before] = (params.h * (pf.d1 - params.c) / rd * (1 - np.exp(-rd * tau))
                  - params.h * pf.d2 / r2d * (1 - np.exp(-r2d * tau)) * X[~before])
    K = np.maximum(u - params.alpha, 0.0) / params.beta
    sol = HomogeneousSolution(grid=grid, X=X, u=u, K=K, t_star=ts, u0=float(u[0]),
                              residual=abs(t_star_residual(params, pf, ts)),
                              method="semi_explicit")
    return coeffs, sol


# --------------------------------------------------------------------------
# diagnostics

@dataclass(frozen=True)
class LemmaReport:
    single_crossing: bool
    price_above_cost: bool
    lower_bound: bool
    n_crossings: int
    min_price_margin: float
    min_lower_bound_gap: float

    @property
    def all_pass(self) -> bool:
        return self.single_crossing and self.price_above_cost and self.lower_bound


def verify_lemmas(sol: HomogeneousSolution, params: ModelParams, pf: PriceFunction,
                  slack: float | None = None) -> LemmaReport:
    """Check single crossing of u through α, P(X) ≥ c, and X ≥ X0 e^{-δt}."""
    t = sol.grid
    s = np.sign(sol.u - params.alpha)
    s = s[s != 0]
    changes = np.nonzero(np.diff(s))[0]
    single = changes.size == 0 or (changes.size == 1 and s[0] > 0)
    margin = pf(sol.X) - params.c
    if slack is None:
        slack = 1e-6 * max(1.0, abs(params.c))
    lower = params.X0 * np.exp(-params.delta * t)
    gap = sol.X - lower
    lb_slack = 1e-9 * max(1.0, params.X0)
    return LemmaReport(
        single_crossing=bool(single),
        price_above_cost=bool(np.min(margin) >= -slack),
        lower_bound=bool(np.min(gap) >= -lb_slack),
        n_crossings=int(changes.size),
        min_price_margin=float(np.min(margin)),
        min_lower_bound_gap=float(np.min(gap)),
    )
