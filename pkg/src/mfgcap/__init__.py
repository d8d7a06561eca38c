"""Capacity expansion under a finite horizon: homogeneous and mean field equilibria."""

__version__ = "0.1.0"

from .errors import (BracketError, ConvergenceError, DivergenceError, DomainError, GridError,
                     MfgCapError, PreconditionError, SchemeFault, ValidationError)
from .homogeneous import HomogeneousSolution, semi_explicit_linear, shoot, verify_lemmas
from .model import (InversePrice, LinearPrice, ModelParams, check_assumption, compute_xmax,
                    load_model, normalize_params, running_reward)
from .mfg import (Dirac, TruncatedExponential, equilibrium_diagnostics, make_grids, solve_mfg)
from .stochastic import StochasticConfig, solve_mfg_stochastic

__all__ = [
    "BracketError", "ConvergenceError", "Dirac", "DivergenceError", "DomainError", "GridError",
    "HomogeneousSolution", "InversePrice", "LinearPrice", "MfgCapError", "ModelParams",
    "PreconditionError", "SchemeFault", "StochasticConfig", "TruncatedExponential",
    "ValidationError", "check_assumption", "compute_xmax", "equilibrium_diagnostics",
    "load_model", "make_grids", "normalize_params", "running_reward", "semi_explicit_linear",
    "shoot", "solve_mfg", "solve_mfg_stochastic", "verify_lemmas",
]
