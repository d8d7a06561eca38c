"""Outer fixed-point iteration on the mean installation rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConvergenceError, PreconditionError, ValidationError
from ..homogeneous import shoot
from ..model import InversePrice, LinearPrice, ModelParams, PriceFunction
from ..numerics import linear_crossing, rk4_linear_forcing
from .density import Density, InitialDensity, build_initial_density, fp_forward
from .grids import Grids
from .value import (AnsatzCoefficients, BoundaryClosures, ValueSurface, ansatz_install_coeffs,
                    ansatz_value_field, hjb_backward_fd, marginal_value, noninstall_value_inverse,
                    noninstall_value_linear, stopping_time, threshold_linear)


@dataclass
class MeanFieldEquilibrium:
    method: str
    grids: Grids
    V: ValueSurface
    m: Density
    xbar: np.ndarray
    nubar: np.ndarray
    x_star: np.ndarray
    t_star: float
    iterations: int
    residual_history: list[float]
    control: np.ndarray
    coeffs: AnsatzCoefficients | None = None
    sigma: float = 0.0
    reduction: bool = False
    m0_info: dict = field(default_factory=dict)
    N: float = 0.0

    @property
    def X_total(self) -> np.ndarray:
        return (self.N + 1) * self.xbar

    @property
    def K_total(self) -> np.ndarray:
        return (self.N + 1) * self.nubar


def cell_bounds(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Physical extent of each control volume (the end cells are half cells)."""
    dx = x[1] - x[0]
    lo = np.maximum(x - 0.5 * dx, x[0])
    hi = np.minimum(x + 0.5 * dx, x[-1])
    return lo, hi


def mean_rate_update(Vx: np.ndarray, m: np.ndarray, params: ModelParams, nubar: np.ndarray,
                     dx: float, cover: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Right-hand side of the fixed-point condition for the mean rate.

    Works on a single row or on whole (t, x) matrices. The installation set
    is taken with the incoming ``nubar``. ``cover = (F, G)`` gives, per
    control volume, the fraction lying inside the installation set and the
    cell average of ``(V_x - alpha)`` over that part; without it each node
    counts fully in or out. A unit point mass on a node has weight one.
    """
    Vx = np.asarray(Vx, dtype=float)
    m = np.asarray(m, dtype=float)
    nb = np.asarray(nubar, dtype=float)
    if cover is None:
        kappa = params.alpha + params.beta * params.N * nb
        F = ((Vx - kappa[..., None]) > 0).astype(float)
        G = F * (Vx - params.alpha)
    else:
        F, G = cover
    w = m * dx
    num = np.sum(w * G, axis=-1)
    den = 2 * params.beta + params.beta * params.N * np.sum(w * F, axis=-1)
    return num / den


def coverage_interval(z: np.ndarray, x: np.ndarray, slope: np.ndarray, level: np.ndarray):
    """Coverage of the control volumes by ``[0, z)`` with integrand ``slope*x + level``.

    Returns ``(F, G)``: covered fraction and the integral of the integrand
    over the covered part divided by the cell length.
    """
    lo, hi = cell_bounds(x)
    z = np.asarray(z, dtype=float)[:, None]
    top = np.clip(z, lo[None, :], hi[None, :])
    length = hi - lo
    F = (top - lo) / length
    G = (0.5 * slope[:, None] * (top ** 2 - lo ** 2) + level[:, None] * (top - lo)) / length
    return F, G


def _ansatz_extent(coeffs: AnsatzCoefficients, x_star: np.ndarray, kappa: np.ndarray):
    """Upper end of the installation set ``{x < x_star, 2A x + B > kappa}``."""
    A, B = coeffs.A, coeffs.B
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.where(A < 0, (kappa - B) / (2 * np.where(A < 0, A, -1.0)),
                     np.where(B > kappa, np.inf, -np.inf))
    return np.maximum(np.minimum(x_star, y), 0.0)


@dataclass
class EnvelopeSlope:
    """Marginal value driving the ansatz control on ``[0, z)``.

    The lower envelope ``min(2A x + B, 2a x + b)`` of the two quadratic
    pieces, written as ``first`` line on ``[0, split)`` and ``second`` beyond.
    The outer piece equals ``kappa`` at the threshold, so the control
    vanishes continuously there.
    """

    z: np.ndarray
    split: np.ndarray
    first: tuple[np.ndarray, np.ndarray]
    second: tuple[np.ndarray, np.ndarray]

    def integral(self, lo, hi, shift) -> np.ndarray:
        """Integral of ``envelope - shift`` over ``[lo, hi) & [0, z)`` (rows: time)."""
        z, xc = self.z[:, None], self.split[:, None]
        top = np.clip(z, lo, hi)
        sh = np.asarray(shift, dtype=float)[:, None]

        def piece(p, q, line):
            s1, k1 = line[0][:, None], line[1][:, None] - sh
            return 0.5 * s1 * (q * q - p * p) + k1 * (q - p)

        lo = lo + 0.0 * top
        mid = np.clip(xc, lo, top)
        return piece(lo, mid, self.first) + piece(mid, top, self.second)


def ansatz_envelope(coeffs: AnsatzCoefficients, x_star: np.ndarray,
                    kappa: np.ndarray) -> EnvelopeSlope:
    inner = (2 * coeffs.A, coeffs.B)
    outer = (2 * coeffs.a, coeffs.b)
    d0 = coeffs.B - coeffs.b
    slope = inner[0] - outer[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = np.where(slope != 0, -d0 / np.where(slope != 0, slope, 1.0), np.inf)
    cross = np.where(cross > 0, cross, np.inf)
    inner_first = d0 <= 0
    first = tuple(np.where(inner_first, i, o) for i, o in zip(inner, outer))
    second = tuple(np.where(inner_first, o, i) for i, o in zip(inner, outer))
    # past the crossing the other line is the smaller one
    return EnvelopeSlope(_ansatz_extent(coeffs, x_star, kappa), cross, first, second)


def envelope_cover(env: EnvelopeSlope, x: np.ndarray, alpha: float):
    """``(F, G)`` of :func:`mean_rate_update` for the envelope control."""
    lo, hi = cell_bounds(x)
    length = hi - lo
    top = np.clip(env.z[:, None], lo[None, :], hi[None, :])
    F = (top - lo) / length
    G = env.integral(lo[None, :], hi[None, :], np.full(env.z.size, alpha)) / length
    return F, G


def envelope_faces(env: EnvelopeSlope, x: np.ndarray, kappa: np.ndarray,
                   beta: float) -> np.ndarray:
    """Installation rate averaged over each interval between nodes."""
    left, right = x[:-1][None, :], x[1:][None, :]
    return env.integral(left, right, kappa) / ((right - left) * 2 * beta)


def envelope_field(env: EnvelopeSlope, x: np.ndarray) -> np.ndarray:
    """Envelope marginal value on the nodes (meaningful where ``x < z``)."""
    X = x[None, :]
    first = env.first[0][:, None] * X + env.first[1][:, None]
    second = env.second[0][:, None] * X + env.second[1][:, None]
    return np.where(X < env.split[:, None], first, second)


def control_field(Vx: np.ndarray, params: ModelParams, nubar: np.ndarray) -> np.ndarray:
    kappa = params.alpha + params.beta * params.N * np.asarray(nubar)
    return np.maximum(Vx - kappa[:, None], 0.0) / (2 * params.beta)


def mean_path(params: ModelParams, nubar: np.ndarray, xbar0: float, grids: Grids) -> np.ndarray:
    """RK4 for ``xbar' = -delta xbar + nubar``."""
    return rk4_linear_forcing(xbar0, params.delta, np.asarray(nubar, dtype=float), grids.dt)


def _fd_threshold(Vx: np.ndarray, params: ModelParams, nubar: np.ndarray, grids: Grids):
    """Threshold from the marginal-value crossing, and the stopping time."""
    kappa = params.alpha + params.beta * params.N * nubar
    gap = Vx - kappa[:, None]
    x = grids.x
    x_star = np.zeros(grids.n_t)
    for n in range(grids.n_t - 1):
        row = gap[n]
        if row[0] <= 0:
            continue
        below = np.flatnonzero(row <= 0)
        if below.size == 0:
            x_star[n] = grids.x_max
            continue
        j = int(below[0])
        x_star[n] = linear_crossing(x, row, j - 1)
    t_star = stopping_time(grids.t, -gap[:, 0])
    return x_star, t_star


def _left_closure_linear(params, pf, grids, xbar, nubar, reduction, sigma):
    a, b = noninstall_value_linear(params, pf, xbar, grids, reduction, sigma)
    x_star, s = threshold_linear(params, a, b, nubar, grids.x_max, reduction)
    t_star = stopping_time(grids.t, s)
    coeffs = ansatz_install_coeffs(params, pf, xbar, nubar, b, t_star, grids, reduction, sigma, a)
    return coeffs, x_star


def boundary_closures(params: ModelParams, pf: PriceFunction, grids: Grids, xbar: np.ndarray,
                      nubar: np.ndarray, reduction: bool = False, sigma: float | None = None,
                      left: str = "pde"):
    """Boundary data for the finite-difference solve.

    At ``x_max`` the non-installation value (``a x_max^2 + b x_max`` for a
    linear price, the quadrature integral for the inverse one). At ``x = 0``
    either the PDE itself with a one-sided derivative (``left="pde"``; the
    optimal drift there points into the domain, so no data is needed) or,
    for a linear price, the Dirichlet value ``C_t`` of the ansatz
    (``left="ansatz"``).
    """
    sigma = params.sigma if sigma is None else sigma
    if left not in ("pde", "ansatz"):
        raise ValidationError(f"left closure must be 'pde' or 'ansatz', got {left!r}")
    if isinstance(pf, LinearPrice):
        coeffs, _ = _left_closure_linear(params, pf, grids, xbar, nubar, reduction, sigma)
        right = coeffs.a * grids.x_max ** 2 + coeffs.b * grids.x_max
        return BoundaryClosures(right=right,
                                left=coeffs.Cq if left == "ansatz" else None), coeffs
    if left == "ansatz":
        raise PreconditionError("the ansatz boundary value needs a linear price")
    if sigma > 0:
        raise PreconditionError("the inverse-price boundary closure assumes sigma = 0")
    if reduction:
        raise PreconditionError("homogeneous-reduction mode is implemented for linear prices")
    right = np.array([float(noninstall_value_inverse(params, pf, xbar, grids, k, grids.x_max)[0])
                      for k in range(grids.n_t)])
    return BoundaryClosures(right=right, left=None), None


class AndersonMixer:
    """Damped fixed-point step, optionally with Anderson acceleration.

    With ``depth = 0`` this is ``x <- omega * g(x) + (1 - omega) * x``. With
    ``depth > 0`` the step is corrected by the least-squares combination of
    the last ``depth`` residual differences (Anderson type II); the result is
    clipped at zero since mean rates are nonnegative.
    """

    def __init__(self, depth: int, omega: float):
        self.depth = int(depth)
        self.omega = omega
        self.xs: list[np.ndarray] = []
        self.fs: list[np.ndarray] = []

    def step(self, x: np.ndarray, gx: np.ndarray) -> np.ndarray:
        f = gx - x
        plain = x + self.omega * f
        if self.depth <= 0:
            return plain
        self.xs.append(x.copy())
        self.fs.append(f.copy())
        if len(self.xs) > self.depth + 1:
            self.xs.pop(0)
            self.fs.pop(0)
        if len(self.xs) < 2:
            return plain
        dX = np.diff(np.array(self.xs), axis=0).T
        dF = np.diff(np.array(self.fs), axis=0).T
        gamma, *_ = np.linalg.lstsq(dF, f, rcond=None)
        return np.maximum(plain - (dX + self.omega * dF) @ gamma, 0.0)


@dataclass
class _Stage:
    xbar: np.ndarray
    surface: ValueSurface
    x_star: np.ndarray
    t_star: float
    coeffs: AnsatzCoefficients | None
    cover: tuple[np.ndarray, np.ndarray]
    control: np.ndarray
    transport: np.ndarray
    at_faces: bool


def _value_stage(method, params, pf, grids, nubar, xbar0, reduction, sigma, layer_tol,
                 fd_left, fd_scheme="upwind") -> _Stage:
    """Mean path, value function, threshold and control for a given mean rate."""
    x = grids.x
    xbar = mean_path(params, nubar, xbar0, grids)
    kappa = params.alpha + params.beta * params.N * nubar
    if method == "ansatz":
        a, b = noninstall_value_linear(params, pf, xbar, grids, reduction, sigma)
        x_star, s = threshold_linear(params, a, b, nubar, grids.x_max, reduction)
        t_star = stopping_time(grids.t, s)
        coeffs = ansatz_install_coeffs(params, pf, xbar, nubar, b, t_star, grids,
                                       reduction, sigma, a)
        surface = ValueSurface(*ansatz_value_field(coeffs, x_star, x))
        env = ansatz_envelope(coeffs, x_star, kappa)
        control = np.where(x[None, :] < env.z[:, None],
                           np.maximum(envelope_field(env, x) - kappa[:, None], 0.0),
                           0.0) / (2 * params.beta)
        return _Stage(xbar, surface, x_star, t_star, coeffs,
                      envelope_cover(env, x, params.alpha), control,
                      envelope_faces(env, x, kappa, params.beta), True)
    closures, coeffs = boundary_closures(params, pf, grids, xbar, nubar, reduction, sigma,
                                         fd_left)
    surface = hjb_backward_fd(params, pf, xbar, nubar, grids, closures, reduction, sigma,
                              layer_tol, fd_scheme)
    x_star, t_star = _fd_threshold(surface.Vx, params, nubar, grids)
    F, _ = coverage_interval(x_star, x, np.zeros(grids.n_t), np.zeros(grids.n_t))
    control = control_field(surface.Vx, params, nubar)
    return _Stage(xbar, surface, x_star, t_star, coeffs,
                  (F, F * np.maximum(surface.Vx - params.alpha, 0.0)), control, control, False)


def solve_mfg(params: ModelParams, pf: PriceFunction, m0: InitialDensity, grids: Grids,
              method: str = "ansatz", outer_tol: float = 1e-6, max_outer: int = 300,
              omega: float = 0.5, reduction: bool = False, sigma: float | None = None,
              layer_tol: float = 1e-9, anderson: int = 0, fd_left: str = "pde",
              fd_scheme: str = "upwind", initial: str = "frozen", callback=None) -> MeanFieldEquilibrium:
    """Heterogeneous mean field equilibrium by damped fixed-point iteration.

    Each sweep computes the mean path, the value stage (quadratic ansatz or
    finite differences), transports the density forward and relaxes the
    mean rate ``nubar <- omega * update + (1 - omega) * nubar``. Stops when
    ``sup|update - nubar| <= outer_tol * max(1, sup nubar)``. ``callback``,
    if given, is called as ``callback(iteration, residual, t_star, nubar, update)``.

    The first guess is ``xbar0 (1 - t/T)``; with ``initial="frozen"`` it is
    replaced by one update computed with the density frozen at ``m0``, which
    makes the first transport step use rates of the right magnitude.
    ``initial="homogeneous"`` starts from the per-producer rate of the
    homogeneous N-player solution with the same mean initial capacity. For
    large ``N`` the reduced problem is too stiff for plain relaxation from
    a crude guess, and this start is then the practical choice.

    Transports inside the iteration are sub-stepped when an iterate moves
    faster than the grid allows. The converged transport is rerun without
    sub-steps, so a grid too coarse for the equilibrium itself still raises
    :class:`GridError`.
    """
    sigma = params.sigma if sigma is None else sigma
    if method not in ("ansatz", "fd"):
        raise ValidationError(f"method must be 'ansatz' or 'fd', got {method!r}")
    if method == "ansatz" and not isinstance(pf, LinearPrice):
        raise PreconditionError("the ansatz method needs a linear price")
    if initial not in ("frozen", "linear", "homogeneous"):
        raise ValidationError("initial must be 'frozen', 'linear' or 'homogeneous', "
                              f"got {initial!r}")
    if not outer_tol > 0:
        raise ValidationError("outer_tol must be > 0")
    if not 0 < omega <= 1:
        raise ValidationError("damping omega must lie in (0, 1]")
    if isinstance(pf, InversePrice) and reduction:
        raise PreconditionError("homogeneous-reduction mode is implemented for linear prices")

    t, x, dx = grids.t, grids.x, grids.dx
    m_init = build_initial_density(params, grids, m0)
    xbar0 = float(m_init @ x) * dx
    nubar = xbar0 * (1.0 - t / params.T)
    if initial == "frozen":
        stage = _value_stage(method, params, pf, grids, nubar, xbar0, reduction, sigma,
                             layer_tol, fd_left, fd_scheme)
        frozen = np.broadcast_to(m_init, (grids.n_t, grids.n_x))
        nubar = mean_rate_update(stage.surface.Vx, frozen, params, nubar, dx, stage.cover)
    elif initial == "homogeneous":
        hom = shoot(replace(params, X0=xbar0 * (params.N + 1)), pf, grid=t)
        nubar = hom.K / (params.N + 1)
    history: list[float] = []
    mixer = AndersonMixer(anderson, omega)

    for it in range(1, max_outer + 1):
        stage = _value_stage(method, params, pf, grids, nubar, xbar0, reduction, sigma,
                             layer_tol, fd_left, fd_scheme)
        xbar, surface, x_star, t_star = stage.xbar, stage.surface, stage.x_star, stage.t_star
        coeffs, control = stage.coeffs, stage.control
        dens = fp_forward(params, stage.transport, grids, m_init, sigma,
                          at_faces=stage.at_faces, substep=True)
        new = mean_rate_update(surface.Vx, dens.m, params, nubar, dx, stage.cover)
        res = float(np.max(np.abs(new - nubar)))
        history.append(res)
        if callback is not None:
            callback(it, res, float(t_star), nubar, new)
        if not math.isfinite(res):
            raise ConvergenceError("fixed-point residual is not finite", residual=res,
                                   residual_history=history)
        done = res <= outer_tol * max(1.0, float(np.max(nubar)))
        if done:
            break
        nubar = mixer.step(nubar, new)
    else:
        raise ConvergenceError(
            f"mean-rate iteration did not converge in {max_outer} sweeps "
            f"(last residual {history[-1]:.3g}); try a smaller damping omega",
            residual=history[-1], residual_history=history)
    # intermediate sweeps may sub-step; the converged transport must fit the grid
    dens = fp_forward(params, stage.transport, grids, m_init, sigma, at_faces=stage.at_faces)

    return MeanFieldEquilibrium(
        method=method, grids=grids, V=surface, m=dens, xbar=xbar, nubar=nubar, x_star=x_star,
        t_star=float(t_star), iterations=it, residual_history=history, control=control,
        coeffs=coeffs, sigma=sigma, reduction=reduction, m0_info=m0.describe(), N=params.N)
