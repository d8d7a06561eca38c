from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import GridError
from ..model import ModelParams, PriceFunction, compute_xmax
from ..numerics import trapezoid_weights


@dataclass(frozen=True)
class Grids:
    """Uniform time grid on [0, T] and capacity grid on [0, x_max]."""

    t: np.ndarray
    x: np.ndarray

    @property
    def n_t(self) -> int:
        return self.t.size

    @property
    def n_x(self) -> int:
        return self.x.size

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def x_max(self) -> float:
        return float(self.x[-1])

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights on the capacity grid (also the FP control volumes)."""
        return trapezoid_weights(self.x.size, self.dx)

    def describe(self) -> dict:
        return {"n_t": self.n_t, "n_x": self.n_x, "T": self.T, "x_max": self.x_max,
                "dt": self.dt, "dx": self.dx}


def make_grids(params: ModelParams, pf: PriceFunction, n_t: int = 2000, n_x: int = 400,
               inflate: float = 1.0) -> Grids:
    """Build grids; ``n_t``/``n_x`` count nodes, ``inflate`` scales x_max (>= 1)."""
    if n_t < 2 or n_x < 3:
        raise GridError(f"need n_t >= 2 and n_x >= 3, got {n_t}, {n_x}")
    if inflate < 1.0:
        raise GridError(f"x_max inflation factor must be >= 1, got {inflate}")
    x_max = compute_xmax(params, pf) * inflate
    return Grids(t=np.linspace(0.0, params.T, n_t), x=np.linspace(0.0, x_max, n_x))
