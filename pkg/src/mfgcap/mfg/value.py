"""Value-function stage of the equilibrium loop.

Closed forms in the non-installation region, the quadratic ansatz in the
installation region, and the implicit finite-difference HJB solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from ..errors import ConvergenceError, DomainError, PreconditionError, ValidationError
from ..model import InversePrice, LinearPrice, ModelParams, PriceFunction
from ..numerics import bisect, linear_crossing
from .grids import Grids

LAYER_CAP = 500


@dataclass
class ValueSurface:
    V: np.ndarray
    Vx: np.ndarray
    newton_iterations: np.ndarray | None = None


@dataclass
class AnsatzCoefficients:
    """Coefficients of the two quadratic pieces on the time grid.

    ``A``, ``B``, ``Cq`` describe the installation region and are only
    meaningful for ``t <= t_star``; after ``t_star`` they hold the values of
    the non-installation piece at ``x = 0`` (``A = 0``, ``B = b``, ``Cq = 0``).
    """

    t: np.ndarray
    a: np.ndarray
    b: np.ndarray
    A: np.ndarray
    B: np.ndarray
    Cq: np.ndarray
    lambda1: float
    lambda2: float
    RA: float
    RB: float
    t_star: float


def quadratic_rate(params: ModelParams, sigma: float | None = None) -> float:
    sigma = params.sigma if sigma is None else sigma
    rho = params.r + 2 * params.delta - sigma ** 2
    if rho <= 0:
        raise PreconditionError(f"r + 2 delta - sigma^2 = {rho:g} must be > 0")
    return rho


def _price_slope(params: ModelParams, pf: LinearPrice, reduction: bool) -> float:
    """h*d2 acting on the own capacity (zero when the own price impact is dropped)."""
    return 0.0 if reduction else params.h * pf.d2


def _others(params: ModelParams, reduction: bool) -> float:
    return params.N + 1 if reduction else params.N


def rk4_linear_backward(p: np.ndarray, q: np.ndarray, pm: np.ndarray, qm: np.ndarray,
                        dt: float, y_end: float) -> np.ndarray:
    """RK4 for ``y' = p(t) y - q(t)`` backward over uniform nodes.

    ``p``, ``q`` are node values, ``pm``, ``qm`` mid-interval values; the
    integration starts from ``y_end`` at the last node.
    """
    n = len(p)
    out = np.empty(n)
    y = float(y_end)
    out[-1] = y
    pl, ql, pml, qml = p.tolist(), q.tolist(), pm.tolist(), qm.tolist()
    half = 0.5 * dt
    for k in range(n - 1, 0, -1):
        k1 = pl[k] * y - ql[k]
        k2 = pml[k - 1] * (y - half * k1) - qml[k - 1]
        k3 = pml[k - 1] * (y - half * k2) - qml[k - 1]
        k4 = pl[k - 1] * (y - dt * k3) - ql[k - 1]
        y = y - dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k - 1] = y
    return out


def _mid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (v[1:] + v[:-1])


# ---------------------------------------------------------------------------
# non-installation region

def a_closed_form(params: ModelParams, pf: LinearPrice, t: np.ndarray,
                  reduction: bool = False, sigma: float | None = None) -> np.ndarray:
    rho = quadratic_rate(params, sigma)
    return -_price_slope(params, pf, reduction) / rho * (1.0 - np.exp(-rho * (params.T - t)))


def noninstall_value_linear(params: ModelParams, pf: LinearPrice, xbar: np.ndarray, grids: Grids,
                            reduction: bool = False, sigma: float | None = None):
    """Coefficients ``(a, b)`` of ``V = a x^2 + b x`` where nobody installs.

    ``b`` is integrated backward with RK4 from ``b_T = 0``; with
    ``reduction=True`` the price sees ``(N+1) xbar`` only, so ``a`` vanishes.
    """
    if not isinstance(pf, LinearPrice):
        raise PreconditionError("noninstall_value_linear needs a linear price")
    t = grids.t
    a = a_closed_form(params, pf, t, reduction, sigma)
    g = params.h * (pf.d1 - params.c - pf.d2 * _others(params, reduction) * np.asarray(xbar))
    rd = params.r + params.delta
    p = np.full(t.size, rd)
    b = rk4_linear_backward(p, g, p[:-1], _mid(g), grids.dt, 0.0)
    return a, b


def noninstall_value_inverse(params: ModelParams, pf: InversePrice, xbar: np.ndarray,
                             grids: Grids, k: int, x):
    """Value and marginal value where nobody installs, inverse price.

    Trapezoid quadrature over ``s`` in ``t_grid[k:]``. Returns arrays shaped
    like ``x``.
    """
    if not isinstance(pf, InversePrice):
        raise PreconditionError("noninstall_value_inverse needs an inverse price")
    x_in = np.asarray(x, dtype=float)
    x = np.atleast_1d(x_in).ravel()
    t = grids.t
    tau = t[k:] - t[k]
    rd = params.r + params.delta
    horizon = (1.0 - math.exp(-rd * (params.T - t[k]))) / rd
    if tau.size < 2:
        z = np.zeros_like(x_in)
        return z, -z
    others = params.N * np.asarray(xbar)[k:]
    decay = np.exp(-params.delta * tau)
    disc = np.exp(-rd * tau)
    den = others[:, None] + np.multiply.outer(decay, x)
    if np.any(den <= 0):
        raise DomainError("N*xbar_s + x*exp(-delta (s-t)) vanishes; inverse price undefined")
    w = np.full(tau.size, grids.dt)
    w[0] = w[-1] = 0.5 * grids.dt
    i_val = (w * disc) @ (1.0 / den)
    i_der = (w * disc * others) @ (1.0 / den ** 2)
    value = params.h * x * (pf.p * i_val - params.c * horizon)
    deriv = params.h * (pf.p * i_der - params.c * horizon)
    return value.reshape(x_in.shape), deriv.reshape(x_in.shape)


# ---------------------------------------------------------------------------
# threshold

def threshold_linear(params: ModelParams, a: np.ndarray, b: np.ndarray, nubar: np.ndarray,
                     x_max: float, reduction: bool = False):
    """Threshold path and stopping time from the closed-form coefficients.

    Returns ``(x_star, s)`` where ``s = alpha + beta N nubar - b``
    is negative exactly where someone installs. With ``reduction=True`` the
    marginal value does not depend on ``x`` and the threshold is either
    ``x_max`` or ``0``.
    """
    s = params.alpha + params.beta * params.N * np.asarray(nubar) - b
    x_star = np.zeros_like(s)
    if reduction:
        x_star[:-1] = np.where(s[:-1] < 0, x_max, 0.0)
    else:
        if np.any(a[:-1] == 0):
            raise PreconditionError("quadratic coefficient a_t vanishes before T; "
                                    "threshold undefined")
        x_star[:-1] = np.maximum(s[:-1] / (2.0 * a[:-1]), 0.0)
    return x_star, s


def threshold_curve(params: ModelParams, coeffs, nubar: np.ndarray, grids: Grids,
                    reduction: bool = False) -> np.ndarray:
    """Threshold capacity x*(t) on the time grid.

    ``coeffs`` is either ``(a, b)`` for a linear price or a callable
    ``deriv(k, x)`` returning the marginal value at time index ``k``; in the
    latter case the threshold is found by bisection on ``[0, x_max]``.
    """
    if not callable(coeffs):
        a, b = coeffs
        return threshold_linear(params, a, b, nubar, grids.x_max, reduction)[0]
    out = np.zeros(grids.n_t)
    for k in range(grids.n_t - 1):
        target = params.alpha + params.beta * params.N * nubar[k]

        def gap(x, k=k, target=target):
            return float(coeffs(k, x)) - target

        if gap(0.0) <= 0:
            continue
        if gap(grids.x_max) >= 0:
            out[k] = grids.x_max
            continue
        out[k] = bisect(gap, 0.0, grids.x_max, xtol=1e-10 * grids.x_max, what="threshold")
    return out


def stopping_time(t: np.ndarray, s: np.ndarray) -> float:
    """Last time at which ``s < 0``, interpolated; 0 if ``s`` is never negative."""
    neg = np.flatnonzero(s[:-1] < 0)
    if neg.size == 0:
        return 0.0
    k = int(neg[-1])
    return linear_crossing(t, s, k)


# ---------------------------------------------------------------------------
# quadratic ansatz in the installation region

def riccati_roots(params: ModelParams, kd2: float, sigma: float | None = None):
    """Roots ``l1 > 0 >= l2`` of ``l^2 - rho l - kd2/beta = 0`` (units 1/year)."""
    rho = quadratic_rate(params, sigma)
    disc = math.sqrt(rho * rho + 4.0 * kd2 / params.beta)
    return 0.5 * (rho + disc), 0.5 * (rho - disc)


def riccati_A(params: ModelParams, kd2: float, t, t_star: float, sigma: float | None = None):
    """Solution of ``A' = rho A + kd2 - A^2/beta`` with ``A(t_star) = 0``.

    Evaluated as ``beta (l1 q + l2 k)/(q + k)`` with ``q = exp((l2-l1)(t*-t))``
    and ``k = -l1/l2``, which cannot overflow for ``t <= t_star``.
    """
    t = np.asarray(t, dtype=float)
    if kd2 == 0.0:
        return np.zeros_like(t)
    l1, l2 = riccati_roots(params, kd2, sigma)
    kappa = -l1 / l2
    q = np.exp((l2 - l1) * (t_star - t))
    den = q + kappa
    if np.any(den <= 0):
        raise ConvergenceError("Riccati solution blows up before t_star")
    return params.beta * (l1 * q + l2 * kappa) / den


def ansatz_install_coeffs(params: ModelParams, pf: LinearPrice, xbar: np.ndarray,
                          nubar: np.ndarray, b: np.ndarray, t_star: float, grids: Grids,
                          reduction: bool = False, sigma: float | None = None,
                          a: np.ndarray | None = None) -> AnsatzCoefficients:
    """Quadratic ansatz ``A x^2 + B x + C`` in the installation region.

    ``A`` from the Riccati closed form with ``A(t_star) = 0``; ``B`` and ``C``
    by backward RK4 from ``B(t_star) = b(t_star)`` and ``C(t_star) = 0``. The
    first RK4 step is the partial one from ``t_star`` to the node below.
    """
    if not isinstance(pf, LinearPrice):
        raise PreconditionError("the quadratic ansatz needs a linear price")
    t = grids.t
    if not 0.0 <= t_star < params.T:
        raise PreconditionError(f"t_star must lie in [0, T), got {t_star}")
    if a is None:
        a = a_closed_form(params, pf, t, reduction, sigma)
    kd2 = _price_slope(params, pf, reduction)
    l1, l2 = riccati_roots(params, kd2, sigma)
    if kd2 == 0.0:
        RA = math.inf
    else:
        try:
            RA = (-l1 / l2) * math.exp((l1 - l2) * t_star)
        except OverflowError:
            RA = math.inf
    dt = grids.dt
    nubar = np.asarray(nubar, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    A = np.zeros(t.size)
    B = b.copy()
    C = np.zeros(t.size)
    k = int(min(math.floor(t_star / dt), t.size - 2))
    if t_star <= 0.0:
        return AnsatzCoefficients(t, a, b, A, B, C, l1, l2, RA, float(b[0]), 0.0)

    others = _others(params, reduction)
    g = params.h * (pf.d1 - params.c - pf.d2 * others * xbar)
    kappa = params.alpha + params.beta * params.N * nubar
    theta = (t_star - t[k]) / dt

    def interp(v):
        return v[k] + theta * (v[k + 1] - v[k])

    # nodes 0..k plus t_star appended as a final node (partial step)
    tn = np.append(t[: k + 1], t_star)
    gn = np.append(g[: k + 1], interp(g))
    kn = np.append(kappa[: k + 1], interp(kappa))
    bts = float(interp(b))
    An = riccati_A(params, kd2, tn, t_star, sigma)
    An[-1] = 0.0
    tm = 0.5 * (tn[1:] + tn[:-1])
    Am = riccati_A(params, kd2, tm, t_star, sigma)
    rd = params.r + params.delta
    p = rd - An / params.beta
    pm = rd - Am / params.beta
    q = gn - An / params.beta * kn
    qm = _mid(gn) - Am / params.beta * _mid(kn)
    Bn = _rk4_two_stage(p, q, pm, qm, dt, t_star - t[k], bts)

    # C' = r C - ((B - kappa)^+)^2 / (4 beta); B at midpoints by averaging
    cq = np.maximum(Bn - kn, 0.0) ** 2 / (4 * params.beta)
    cqm = np.maximum(_mid(Bn) - _mid(kn), 0.0) ** 2 / (4 * params.beta)
    pr = np.full(tn.size, params.r)
    Cn = _rk4_two_stage(pr, cq, pr[:-1], cqm, dt, t_star - t[k], 0.0)

    A[: k + 1] = An[:-1]
    B[: k + 1] = Bn[:-1]
    C[: k + 1] = Cn[:-1]
    return AnsatzCoefficients(t, a, b, A, B, C, l1, l2, RA, bts, float(t_star))


def _rk4_two_stage(p, q, pm, qm, dt, first, y_end):
    """Backward RK4 where the last interval has length ``first`` (partial step)."""
    y = float(y_end)
    if first > 0:
        h = first
        k1 = p[-1] * y - q[-1]
        k2 = pm[-1] * (y - 0.5 * h * k1) - qm[-1]
        k3 = pm[-1] * (y - 0.5 * h * k2) - qm[-1]
        k4 = p[-2] * (y - h * k3) - q[-2]
        y = y - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    head = rk4_linear_backward(p[:-1], q[:-1], pm[:-1], qm[:-1], dt, y)
    return np.append(head, y_end)


def ansatz_value_field(coeffs: AnsatzCoefficients, x_star: np.ndarray, x: np.ndarray):
    """Piecewise quadratic value and its derivative on the (t, x) grid."""
    inside = x[None, :] < x_star[:, None]
    X = x[None, :]
    V = np.where(inside, coeffs.A[:, None] * X ** 2 + coeffs.B[:, None] * X + coeffs.Cq[:, None],
                 coeffs.a[:, None] * X ** 2 + coeffs.b[:, None] * X)
    Vx = np.where(inside, 2 * coeffs.A[:, None] * X + coeffs.B[:, None],
                  2 * coeffs.a[:, None] * X + coeffs.b[:, None])
    return V, Vx


# ---------------------------------------------------------------------------
# finite differences

@dataclass
class BoundaryClosures:
    """Dirichlet data per time layer; ``left=None`` means the PDE itself is
    imposed at ``x = 0`` with a one-sided derivative."""

    right: np.ndarray
    left: np.ndarray | None = None


def running_revenue(params: ModelParams, pf: PriceFunction, x: np.ndarray, xbar_n: float,
                    reduction: bool) -> np.ndarray:
    """``h (P(x + N xbar) - c) x`` on a capacity grid."""
    if reduction:
        price = pf((params.N + 1) * xbar_n) + 0.0 * x
    elif isinstance(pf, InversePrice):
        y = x + params.N * xbar_n
        if np.any(y <= 0):
            raise DomainError("inverse price undefined at zero aggregate capacity")
        price = pf.p / y
    else:
        price = pf(x + params.N * xbar_n)
    return params.h * (price - params.c) * x


def marginal_value(V: np.ndarray, dx: float) -> np.ndarray:
    """Central differences inside, second-order one-sided at the edges."""
    return np.gradient(V, dx, axis=-1, edge_order=2)


def hjb_backward_fd(params: ModelParams, pf: PriceFunction, xbar: np.ndarray, nubar: np.ndarray,
                    grids: Grids, closures: BoundaryClosures, reduction: bool = False,
                    sigma: float | None = None, layer_tol: float = 1e-9,
                    scheme: str = "upwind") -> ValueSurface:
    """Implicit finite-difference HJB solve, one Newton solve per layer.

    The layer residual is the fully implicit discretization (all spatial
    terms at the unknown layer) with the positive part taken as written.
    ``scheme="upwind"`` takes the decay drift with a backward difference
    and the installation term with a forward one, which makes the scheme
    monotone. ``scheme="central"`` uses centred differences throughout; it
    is second order but undamped odd-even modes can appear near ``x_max``.
    Newton steps use the banded generalized Jacobian and are halved
    while they fail to reduce the residual. A layer is accepted once
    ``dt * sup|residual| <= layer_tol * max(1, sup|V|)``.
    """
    if scheme not in ("upwind", "central"):
        raise ValidationError(f"scheme must be 'upwind' or 'central', got {scheme!r}")
    sigma = params.sigma if sigma is None else sigma
    x = grids.x
    dt, dx = grids.dt, grids.dx
    nx = grids.n_x
    free_left = closures.left is None
    lo = 0 if free_left else 1
    # exclusive end of the unknowns; with the upwind scheme and no noise the
    # right node is an outflow node (decay drift, nobody installs at x_max)
    free_right = scheme == "upwind" and sigma == 0
    hi = nx if free_right else nx - 1
    xi = x[lo:hi]
    s_diff = 0.5 * sigma ** 2 * xi ** 2 / dx ** 2
    inv2b = 1.0 / (2.0 * params.beta)
    V = np.zeros((grids.n_t, nx))
    iters = np.zeros(grids.n_t, dtype=int)
    rate = 1.0 / dt + params.r

    def residual_upwind(v, vnext, f, kappa):
        j = np.arange(lo, hi)
        back = (v[j] - v[np.maximum(j - 1, 0)]) / dx
        fwd = (v[np.minimum(j + 1, nx - 1)] - v[j]) / dx
        g = np.maximum(fwd - kappa, 0.0)
        if free_right:
            g[-1] = 0.0
        res = (vnext[j] - v[j]) / dt - params.r * v[j] - params.delta * x[j] * back \
            + f[j] + 0.25 / params.beta * g * g
        pull = params.delta * x[j] / dx
        push = g * inv2b / dx
        diag = -rate - pull - push - 2 * s_diff
        if sigma > 0:
            lap = v[j + 1] - 2 * v[j] + v[np.maximum(j - 1, 0)]
            res = res + s_diff * lap
        n = hi - lo
        ab = np.zeros((4, n))
        ab[2] = diag
        ab[1, 1:] = (push + s_diff)[:-1]
        ab[3, :-1] = (pull + s_diff)[1:]
        return res, ab

    def residual(v, vnext, f, kappa):
        # v is the full layer; returns residual on unknowns and the Jacobian bands
        if scheme == "upwind":
            return residual_upwind(v, vnext, f, kappa)
        d = (v[2:] - v[:-2]) / (2 * dx)
        g = np.maximum(d - kappa, 0.0)
        lap = v[2:] - 2 * v[1:-1] + v[:-2]
        res_int = (vnext[1:-1] - v[1:-1]) / dt - params.r * v[1:-1] \
            - params.delta * x[1:-1] * d + f[1:-1] + 0.25 / params.beta * g * g
        conv = (-params.delta * x[1:-1] + g * inv2b) / (2 * dx)
        if sigma > 0:
            res_int = res_int + 0.5 * sigma ** 2 * x[1:-1] ** 2 * lap / dx ** 2
        if free_left:
            # second-order one-sided derivative at x = 0
            d0 = (4 * v[1] - 3 * v[0] - v[2]) / (2 * dx)
            g0 = max(d0 - kappa, 0.0)
            r0 = (vnext[0] - v[0]) / dt - params.r * v[0] + f[0] + 0.25 / params.beta * g0 * g0
            res = np.concatenate(([r0], res_int))
        else:
            res = res_int
            g0 = 0.0
        # banded Jacobian (one sub-, two super-diagonals) for unknowns lo..hi-1
        n = hi - lo
        ab = np.zeros((4, n))
        diag = np.full(n, -rate) - 2 * s_diff
        up = np.zeros(n)
        dn = np.zeros(n)
        off = 1 if free_left else 0
        up[off:] = conv + s_diff[off:]
        dn[off:] = -conv + s_diff[off:]
        if free_left:
            w = g0 * inv2b / (2 * dx)
            diag[0] = -rate - 3 * w
            up[0] = 4 * w
            ab[0, 2] = -w
        ab[2] = diag
        ab[1, 1:] = up[:-1]
        ab[3, :-1] = dn[1:]
        return res, ab

    for n in range(grids.n_t - 2, -1, -1):
        vnext = V[n + 1]
        v = vnext.copy()
        if not free_right:
            v[-1] = closures.right[n]
        if not free_left:
            v[0] = closures.left[n]
        f = running_revenue(params, pf, x, float(xbar[n]), reduction)
        kappa = params.alpha + params.beta * params.N * float(nubar[n])
        res, ab = residual(v, vnext, f, kappa)
        err = float(np.max(np.abs(res))) * dt
        it = 0
        while err > layer_tol * max(1.0, float(np.max(np.abs(v)))):
            if it >= LAYER_CAP:
                raise ConvergenceError(f"HJB layer {n} (t = {grids.t[n]:.6g}) did not converge "
                                       f"in {LAYER_CAP} Newton iterations", residual=err)
            step = solve_banded((1, 2), ab, -res, check_finite=False)
            lam = 1.0
            while True:
                trial = v.copy()
                trial[lo:hi] += lam * step
                tres, tab = residual(trial, vnext, f, kappa)
                terr = float(np.max(np.abs(tres))) * dt
                if terr < err or lam < 1e-3:
                    break
                lam *= 0.5
            v, res, ab, err = trial, tres, tab, terr
            it += 1
        V[n] = v
        iters[n] = it
    return ValueSurface(V, marginal_value(V, dx), iters)
