"""Small numerical helpers: fixed-step RK4, bisection, trapezoid weights."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import BracketError, ConvergenceError


def uniform_grid(T: float, n: int) -> np.ndarray:
    """``n`` steps on ``[0, T]`` (``n + 1`` nodes)."""
    if n < 1:
        raise ValueError("need at least one step")
    return np.linspace(0.0, T, n + 1)


def grid_step(grid: np.ndarray) -> float:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must be a 1-D array with at least two nodes")
    dt = (grid[-1] - grid[0]) / (grid.size - 1)
    if dt <= 0 or np.max(np.abs(np.diff(grid) - dt)) > 1e-9 * max(1.0, abs(grid[-1])):
        raise ValueError("grid must be uniform and increasing")
    return float(dt)


def trapezoid_weights(n: int, dx: float) -> np.ndarray:
    w = np.full(n, dx)
    w[0] = w[-1] = 0.5 * dx
    return w


def rk4_linear_forcing(y0: float, decay: float, forcing: np.ndarray, dt: float) -> np.ndarray:
    """RK4 for ``y' = -decay*y + f(t)`` with ``f`` tabulated on a uniform grid.

    Mid-step forcing values are linear interpolants of the tabulated ones.
    """
    n = forcing.size
    y = np.empty(n)
    y[0] = y0
    yk = float(y0)
    for k in range(n - 1):
        f0, f1 = forcing[k], forcing[k + 1]
        fm = 0.5 * (f0 + f1)
        k1 = -decay * yk + f0
        k2 = -decay * (yk + 0.5 * dt * k1) + fm
        k3 = -decay * (yk + 0.5 * dt * k2) + fm
        k4 = -decay * (yk + dt * k3) + f1
        yk = yk + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        y[k + 1] = yk
    return y


def rk4_backward(f: Callable[[float, float], float], t_end: float, y_end: float,
                 grid: np.ndarray, k_stop: int) -> np.ndarray:
    """Integrate ``y' = f(t, y)`` backward from ``(t_end, y_end)``.

    ``t_end`` lies in ``[grid[k_stop], grid[k_stop + 1])`` (or equals the last
    node). Returns values on ``grid[0..k_stop]``; the first step is a partial
    one from ``t_end`` down to ``grid[k_stop]``.
    """
    out = np.empty(k_stop + 1)

    def step(t, y, hstep):
        k1 = f(t, y)
        k2 = f(t - 0.5 * hstep, y - 0.5 * hstep * k1)
        k3 = f(t - 0.5 * hstep, y - 0.5 * hstep * k2)
        k4 = f(t - hstep, y - hstep * k3)
        return y - hstep / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    y = float(y_end)
    first = t_end - grid[k_stop]
    if first > 0:
        y = step(t_end, y, first)
    out[k_stop] = y
    for k in range(k_stop, 0, -1):
        y = step(grid[k], y, grid[k] - grid[k - 1])
        out[k - 1] = y
    return out


def bisect(fun: Callable[[float], float], lo: float, hi: float, *, ftol: float = 0.0,
           xtol: float = 0.0, max_iter: int = 200, what: str = "root") -> float:
    """Plain bisection on a sign change; stops on ``|f| <= ftol`` or a collapsed bracket."""
    flo, fhi = fun(lo), fun(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if math.copysign(1.0, flo) == math.copysign(1.0, fhi):
        raise BracketError(f"{what}: no sign change on [{lo:g}, {hi:g}] "
                           f"(f = {flo:g}, {fhi:g})")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if abs(fm) <= ftol or mid in (lo, hi) or hi - lo <= xtol:
            return mid
        if math.copysign(1.0, fm) == math.copysign(1.0, flo):
            lo, flo = mid, fm
        else:
            hi = mid
    raise ConvergenceError(f"{what}: bisection did not converge in {max_iter} iterations",
                           residual=abs(fm))


def linear_crossing(t: np.ndarray, s: np.ndarray, k: int) -> float:
    """Interpolated zero of ``s`` between nodes ``k`` and ``k+1``."""
    ds = s[k + 1] - s[k]
    if ds == 0:
        return float(t[k])
    return float(t[k] + (t[k + 1] - t[k]) * (-s[k]) / ds)
