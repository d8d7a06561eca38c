"""Initial densities and the forward Fokker-Planck transport.

The density lives on the nodes of the capacity grid. Node ``j`` owns the
control volume ``[x_j - dx/2, x_j + dx/2]`` (all of width ``dx``), so the
mass of a row is ``sum(m) * dx`` and the flux form telescopes exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.linalg import solve_banded

from ..errors import GridError, SchemeFault, ValidationError
from ..model import ModelParams
from .grids import Grids

NEG_TOL = 1e-12


@dataclass(frozen=True)
class TruncatedExponential:
    """Discrete truncated exponential initial distribution.

    Levels ``x_i = i * x_end / n_levels`` carry weights ``exp(-n_levels x_i / X0)``.
    With ``layout="mass"`` the normalized weights are probabilities of the
    levels; with ``layout="capacity"`` they are the capacity shares of
    ``n_levels`` equally likely producers. Either way capacities are then
    rescaled so that the mean equals ``mean`` (default ``X0 / (N + 1)``).
    ``x_end`` defaults to ``X0``.
    """

    n_levels: int
    x_end: float | None = None
    layout: str = "mass"
    mean: float | None = None
    kind = "truncated_exponential"

    def __post_init__(self):
        if self.n_levels < 1:
            raise ValidationError("n_levels must be >= 1")
        if self.layout not in ("mass", "capacity"):
            raise ValidationError(f"layout must be 'mass' or 'capacity', got {self.layout!r}")
        if self.x_end is not None and not self.x_end > 0:
            raise ValidationError("x_end must be > 0")

    def atoms(self, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
        x_end = params.X0 if self.x_end is None else self.x_end
        n = self.n_levels
        lev = np.arange(1, n + 1) * (x_end / n)
        w = np.exp(-n * lev / params.X0)
        if not np.all(w > 0):
            raise ValidationError("truncated exponential weights underflow to zero; "
                                  "reduce n_levels or x_end")
        w = w / w.sum()
        if self.layout == "mass":
            pos, mass = lev, w
        else:
            pos, mass = w.copy(), np.full(n, 1.0 / n)
        target = self.target_mean(params)
        return pos * (target / float(mass @ pos)), mass

    def target_mean(self, params: ModelParams) -> float:
        return params.X0 / (params.N + 1) if self.mean is None else self.mean

    def describe(self) -> dict:
        return {"kind": self.kind, "n_levels": self.n_levels, "x_end": self.x_end,
                "layout": self.layout, "mean": self.mean,
                "rescaling": "capacities scaled so the mean is X0/(N+1)"
                if self.mean is None else "capacities scaled to the given mean"}


@dataclass(frozen=True)
class Dirac:
    x0: float
    kind = "dirac"

    def atoms(self, params: ModelParams):
        if self.x0 < 0:
            raise ValidationError("dirac location must be >= 0")
        return np.array([float(self.x0)]), np.array([1.0])

    def describe(self) -> dict:
        return {"kind": self.kind, "x0": self.x0}


@dataclass(frozen=True)
class CustomTable:
    x: Sequence[float]
    mass: Sequence[float]
    kind = "custom"

    def atoms(self, params: ModelParams):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        w = np.atleast_1d(np.asarray(self.mass, dtype=float))
        if x.shape != w.shape or x.size == 0:
            raise ValidationError("custom table needs equally long non-empty x and mass lists")
        if np.any(w <= 0):
            raise ValidationError("custom table masses must be positive")
        if np.any(x < 0):
            raise ValidationError("custom table capacities must be >= 0")
        return x, w / w.sum()

    def describe(self) -> dict:
        return {"kind": self.kind, "x": list(map(float, np.atleast_1d(self.x))),
                "mass": list(map(float, np.atleast_1d(self.mass)))}


InitialDensity = Union[TruncatedExponential, Dirac, CustomTable]


def initial_density_from_dict(raw: dict) -> InitialDensity:
    if not isinstance(raw, dict):
        raise ValidationError("m0: expected an object")
    kind = raw.get("kind")

    def need(key):
        if key not in raw:
            raise ValidationError(f"m0.{key}: missing for kind {kind!r}")
        return raw[key]

    try:
        if kind == "truncated_exponential":
            return TruncatedExponential(int(need("n_levels")), raw.get("x_end"),
                                        raw.get("layout", "mass"), raw.get("mean"))
        if kind == "dirac":
            return Dirac(float(need("x0")))
        if kind == "custom":
            return CustomTable(need("x"), need("mass"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"m0: {exc}") from None
    raise ValidationError(f"m0.kind must be truncated_exponential, dirac or custom, got {kind!r}")


@dataclass
class Density:
    """Density rows on the (t, x) grid and the mass of each row."""

    m: np.ndarray
    dx: float
    mass: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mass = self.m.sum(axis=-1) * self.dx

    def mean(self, x: np.ndarray) -> np.ndarray:
        return (self.m @ x) * self.dx


def build_initial_density(params: ModelParams, grids: Grids, kind: InitialDensity) -> np.ndarray:
    """Register the atoms of ``kind`` on the capacity grid.

    Each atom is split linearly between its two neighbouring nodes, which
    keeps both the mass and the mean exact.
    """
    pos, mass = kind.atoms(params)
    if np.any(pos > grids.x_max):
        raise GridError(f"initial capacity {pos.max():g} MW lies beyond x_max = {grids.x_max:g} MW")
    dx = grids.dx
    m0 = np.zeros(grids.n_x)
    u = pos / dx
    j = np.minimum(np.floor(u).astype(int), grids.n_x - 2)
    f = u - j
    np.add.at(m0, j, mass * (1.0 - f))
    np.add.at(m0, j + 1, mass * f)
    return m0 / dx


def required_n_t(grids: Grids, max_speed: float, limit: float = 1.0) -> int:
    """Smallest node count with ``dt * max_speed / dx <= limit``."""
    return int(np.ceil(grids.T * max_speed / (limit * grids.dx))) + 1


def check_cfl(grids: Grids, speed: np.ndarray) -> None:
    """Raise :class:`GridError` if ``dt * max|speed| / dx`` exceeds one."""
    vmax = float(np.max(np.abs(np.asarray(speed)[:-1])))
    if grids.dt * vmax / grids.dx > 1.0:
        need = required_n_t(grids, vmax)
        raise GridError(f"CFL condition violated (dt*max|v|/dx = {grids.dt * vmax / grids.dx:.3g}); "
                        f"use n_t >= {need}", required_n_t=need)


def _diffusion_bands(grids: Grids, sigma: float) -> np.ndarray:
    """Banded form of ``I - dt*L`` for the diffusive flux ``-(sigma^2/2) d(x^2 m)/dx``."""
    x2 = grids.x ** 2
    k = grids.dt * 0.5 * sigma ** 2 / grids.dx ** 2
    n = grids.n_x
    ab = np.zeros((3, n))
    # flux through face j+1/2 moves k*(x2[j+1]*m[j+1] - x2[j]*m[j]) from j+1 to j
    ab[1] = 1.0 + k * x2 * np.r_[1.0, np.full(n - 2, 2.0), 1.0]
    ab[0, 1:] = -k * x2[1:]    # coefficient of m[j+1] in row j
    ab[2, :-1] = -k * x2[:-1]  # coefficient of m[j-1] in row j
    return ab


def fp_forward(params: ModelParams, control: np.ndarray, grids: Grids, m0: np.ndarray,
               sigma: float | None = None, at_faces: bool = False,
               substep: bool = False) -> Density:
    """Transport ``m0`` forward under the drift ``-delta x + control``.

    ``control`` holds the installation rate on every (t, x) node, or on the
    ``n_x - 1`` cell faces when ``at_faces`` is set. Node values are turned
    into face values by averaging. Advection uses upwind donor-cell fluxes
    with explicit Euler steps. With ``sigma > 0`` the diffusive flux is
    added implicitly (a tridiagonal solve per step).

    A step whose Courant number exceeds one raises :class:`GridError`
    unless ``substep`` is set, in which case it is split into enough equal
    sub-steps (the control is held fixed across them).
    """
    sigma = params.sigma if sigma is None else sigma
    control = np.asarray(control, dtype=float)
    shape = (grids.n_t, grids.n_x - 1 if at_faces else grids.n_x)
    if control.shape != shape:
        raise ValueError(f"control must have shape {shape}, got {control.shape}")
    dt, dx = grids.dt, grids.dx
    if at_faces:
        vf = control - params.delta * 0.5 * (grids.x[1:] + grids.x[:-1])
        speed = vf
    else:
        vel = control - params.delta * grids.x
        vf = 0.5 * (vel[:, 1:] + vel[:, :-1])
        speed = vel
    courant = dt * np.max(np.abs(speed[:-1]), axis=1) / dx
    if not substep:
        check_cfl(grids, speed)
    parts = np.maximum(np.ceil(courant / 0.9), 1).astype(int)
    cp = np.maximum(vf, 0.0) * (dt / dx)
    cn = np.minimum(vf, 0.0) * (dt / dx)
    bands = _diffusion_bands(grids, sigma) if sigma > 0 else None

    m = np.empty((grids.n_t, grids.n_x))
    m[0] = m0
    row = np.array(m0, dtype=float)
    for n in range(grids.n_t - 1):
        k = parts[n]
        for _ in range(k):
            flux = (cp[n] * row[:-1] + cn[n] * row[1:]) / k
            row = row.copy()
            row[:-1] -= flux
            row[1:] += flux
        if bands is not None:
            row = solve_banded((1, 1), bands, row, check_finite=False)
        m[n + 1] = row
    low = float(m.min())
    if low < -NEG_TOL * max(1.0, float(np.abs(m0).max())):
        n_bad, j_bad = np.unravel_index(int(np.argmin(m)), m.shape)
        raise SchemeFault(f"negative density {low:.3g} at t = {grids.t[n_bad]:.6g}, "
                          f"x = {grids.x[j_bad]:.6g}")
    return Density(m, dx)
