"""Capacity noise ``sigma x dW``: the same solvers with the diffusion terms on.

All routines share their code path with the deterministic ones; with
``sigma = 0`` they run exactly the same floating-point operations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, ValidationError
from .mfg.density import Density, InitialDensity, fp_forward
from .mfg.equilibrium import MeanFieldEquilibrium, solve_mfg
from .mfg.grids import Grids
from .mfg.value import (AnsatzCoefficients, BoundaryClosures, ValueSurface,
                        ansatz_install_coeffs, hjb_backward_fd, noninstall_value_linear,
                        stopping_time, threshold_linear)
from .model import LinearPrice, ModelParams, PriceFunction


@dataclass(frozen=True)
class StochasticConfig:
    sigma: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValidationError(f"sigma must be >= 0, got {self.sigma}")

    def check(self, params: ModelParams) -> None:
        if self.sigma ** 2 >= params.r + 2 * params.delta:
            raise PreconditionError(
                f"sigma^2 = {self.sigma ** 2:g} must stay below r + 2 delta = "
                f"{params.r + 2 * params.delta:g}")

    def apply(self, params: ModelParams) -> ModelParams:
        self.check(params)
        return params.replace(sigma=self.sigma)


def hjb_backward_fd_sigma(params: ModelParams, pf: PriceFunction, xbar, nubar, grids: Grids,
                          closures: BoundaryClosures, sigma: float, **kw) -> ValueSurface:
    """Finite-difference HJB with the term ``(sigma^2 x^2 / 2) V_xx``.

    The layer system is implicit in the diffusion, so no explicit stability
    bound on ``dt`` applies.
    """
    StochasticConfig(sigma).check(params)
    return hjb_backward_fd(params, pf, xbar, nubar, grids, closures, sigma=sigma, **kw)


def fp_forward_sigma(params: ModelParams, control, grids: Grids, m0, sigma: float) -> Density:
    """FP transport with the diffusive flux ``d/dx (sigma^2 x^2 m) / 2``."""
    StochasticConfig(sigma).check(params)
    return fp_forward(params, control, grids, m0, sigma=sigma)


def ansatz_coeffs_sigma(params: ModelParams, pf: LinearPrice, xbar, nubar, grids: Grids,
                        sigma: float, reduction: bool = False) -> tuple[AnsatzCoefficients,
                                                                          np.ndarray]:
    """Quadratic-ansatz coefficients with the rate ``r + 2 delta - sigma^2``.

    Returns the coefficients and the threshold path.
    """
    StochasticConfig(sigma).check(params)
    a, b = noninstall_value_linear(params, pf, xbar, grids, reduction, sigma)
    x_star, s = threshold_linear(params, a, b, nubar, grids.x_max, reduction)
    t_star = stopping_time(grids.t, s)
    coeffs = ansatz_install_coeffs(params, pf, xbar, nubar, b, t_star, grids, reduction, sigma, a)
    return coeffs, x_star


def solve_mfg_stochastic(params: ModelParams, pf: PriceFunction, m0: InitialDensity,
                         grids: Grids, sigma: float, **kw) -> MeanFieldEquilibrium:
    """:func:`solve_mfg` with capacity noise of volatility ``sigma``."""
    params = StochasticConfig(sigma).apply(params)
    return solve_mfg(params, pf, m0, grids, sigma=sigma, **kw)
