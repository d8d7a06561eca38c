"""Heterogeneous mean field equilibrium solver."""

from .density import (CustomTable, Density, Dirac, TruncatedExponential, build_initial_density,
                      fp_forward, initial_density_from_dict)
from .equilibrium import (MeanFieldEquilibrium, boundary_closures, control_field,
                          mean_rate_update, solve_mfg)
from .diagnostics import EquilibriumDiagnostics, equilibrium_diagnostics
from .grids import Grids, make_grids
from .value import (AnsatzCoefficients, BoundaryClosures, ValueSurface, ansatz_install_coeffs,
                    hjb_backward_fd, noninstall_value_inverse, noninstall_value_linear,
                    threshold_curve)

__all__ = [
    "AnsatzCoefficients", "BoundaryClosures", "CustomTable", "Density", "Dirac",
    "EquilibriumDiagnostics", "Grids",
    "MeanFieldEquilibrium", "TruncatedExponential", "ValueSurface", "ansatz_install_coeffs",
    "boundary_closures", "build_initial_density", "control_field", "equilibrium_diagnostics", "fp_forward",
    "hjb_backward_fd", "initial_density_from_dict", "make_grids", "mean_rate_update",
    "noninstall_value_inverse", "noninstall_value_linear", "solve_mfg", "threshold_curve",
]
