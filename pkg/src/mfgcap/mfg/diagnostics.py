"""Post-solve checks on a mean field equilibrium."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .equilibrium import MeanFieldEquilibrium


@dataclass(frozen=True)
class EquilibriumDiagnostics:
    """Structural checks; every ``*_ok`` flag is computed with a small relative slack.

    ``seam_jump`` is the largest jump of the marginal value across the
    threshold curve (ansatz only, zero for finite differences), in $/MW.
    """

    mass_drift: float
    min_density: float
    concavity_violation: float
    monotonicity_violation: float
    seam_jump: float
    x_star_terminal: float
    x_star_after_stop: float
    mass_ok: bool
    positivity_ok: bool
    concave_ok: bool
    monotone_ok: bool
    threshold_ok: bool

    @property
    def all_pass(self) -> bool:
        return (self.mass_ok and self.positivity_ok and self.concave_ok and self.monotone_ok
                and self.threshold_ok)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["all_pass"] = self.all_pass
        return out


def _seam_mask(eq: MeanFieldEquilibrium) -> np.ndarray:
    """Second-difference stencils that straddle the ansatz threshold."""
    x = eq.grids.x
    mid = x[1:-1]
    dx = eq.grids.dx
    if eq.method != "ansatz":
        return np.zeros((eq.grids.n_t, mid.size), dtype=bool)
    return np.abs(mid[None, :] - eq.x_star[:, None]) <= 1.5 * dx


def seam_jump(eq: MeanFieldEquilibrium) -> float:
    """Largest ``|V_x(x*+) - V_x(x*-)|`` over installing times (ansatz runs)."""
    c = eq.coeffs
    if eq.method != "ansatz" or c is None:
        return 0.0
    live = (eq.grids.t < eq.t_star) & (eq.x_star > 0) & (eq.x_star < eq.grids.x_max)
    if not np.any(live):
        return 0.0
    xs = eq.x_star[live]
    inner = 2 * c.A[live] * xs + c.B[live]
    outer = 2 * c.a[live] * xs + c.b[live]
    return float(np.max(np.abs(inner - outer)))


def equilibrium_diagnostics(eq: MeanFieldEquilibrium, mass_tol: float = 1e-9,
                            neg_tol: float = 1e-12, shape_rtol: float = 1e-8
                            ) -> EquilibriumDiagnostics:
    """Mass, positivity, concavity of ``V``, monotone control and threshold end behaviour.

    Concavity and monotonicity are measured relative to ``max|V|`` and
    ``max|control|``. For ansatz runs the stencils touching the threshold are
    skipped, since the approximate value is only continuous there; the size
    of the kink is reported as ``seam_jump`` instead.
    """
    V = eq.V.V
    second = V[:, 2:] - 2 * V[:, 1:-1] + V[:, :-2]
    second = np.where(_seam_mask(eq), 0.0, second)
    scale_v = max(float(np.max(np.abs(V))), 1e-300)
    concav = max(float(np.max(second)), 0.0) / scale_v

    u = eq.control
    rise = np.diff(u, axis=1)
    scale_u = max(float(np.max(np.abs(u))), 1e-300)
    mono = max(float(np.max(rise)), 0.0) / scale_u

    t, dt = eq.grids.t, eq.grids.dt
    after = t > eq.t_star + dt
    xs_after = float(np.max(eq.x_star[after])) if np.any(after) else 0.0
    drift = float(np.max(np.abs(eq.m.mass - 1.0)))
    low = float(np.min(eq.m.m))
    return EquilibriumDiagnostics(
        mass_drift=drift, min_density=low, concavity_violation=concav,
        monotonicity_violation=mono, seam_jump=seam_jump(eq),
        x_star_terminal=float(eq.x_star[-1]), x_star_after_stop=xs_after,
        mass_ok=drift <= mass_tol, positivity_ok=low >= -neg_tol,
        concave_ok=concav <= shape_rtol, monotone_ok=mono <= shape_rtol,
        threshold_ok=eq.x_star[-1] == 0 and xs_after == 0)
