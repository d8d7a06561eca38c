"""Randomized properties over 50 parameter draws each."""

import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from mfgcap.errors import DivergenceError
from mfgcap.homogeneous import integrate_forward, semi_explicit_linear, shoot, verify_lemmas
from mfgcap.mfg import TruncatedExponential, fp_forward, make_grids
from mfgcap.mfg.density import build_initial_density
from mfgcap.model import InversePrice, LinearPrice, check_assumption
from mfgcap.numerics import uniform_grid

from conftest import params_33

DRAWS = settings(max_examples=50, deadline=None, derandomize=True,
                 suppress_health_check=[HealthCheck.too_slow])

draw_params = st.fixed_dictionaries({
    "r": st.floats(0.02, 0.2),
    "delta": st.floats(0.02, 0.15),
    "T": st.floats(1.0, 8.0),
    "alpha": st.floats(0.8e6, 2.0e6),
    "beta": st.floats(0.1, 0.5),
    "X0": st.floats(1.0e4, 5.0e4),
})


def _path(p, pf, grid):
    """Closed-form capacity path; pure decay when installation never pays."""
    if not check_assumption(p, pf).holds:
        return p.X0 * np.exp(-p.delta * grid)
    return semi_explicit_linear(p, pf, grid)[1].X


@DRAWS
@given(kw=draw_params, d1=st.floats(200.0, 800.0))
def test_shooting_map_is_increasing(kw, d1):
    p = params_33(**kw)
    pf = LinearPrice(d1, 0.01)
    grid = uniform_grid(p.T, 400)
    finals = []
    for u0 in np.linspace(0.5 * p.alpha, 1.5 * p.alpha, 5):
        try:
            finals.append(integrate_forward(p, pf, u0, grid)[1][-1])
        except DivergenceError:
            finals.append(np.inf if u0 > p.alpha else -np.inf)
    assume(np.isfinite(finals).sum() >= 2)
    assert np.all(np.diff(finals) > 0)


@DRAWS
@given(kw=draw_params, d1=st.floats(200.0, 700.0), bump=st.floats(1.0, 100.0))
def test_comparison_principle_in_the_price_level(kw, d1, bump):
    # a uniformly higher price never leads to less capacity
    p = params_33(**kw)
    grid = uniform_grid(p.T, 1000)
    assume(check_assumption(p, LinearPrice(d1, 0.01)).holds)
    lo = _path(p, LinearPrice(d1, 0.01), grid)
    hi = _path(p, LinearPrice(d1 + bump, 0.01), grid)
    assert np.all(hi >= lo - 1e-9 * p.X0)


@DRAWS
@given(kw=draw_params, cost=st.floats(1.0, 1.5))
def test_comparison_principle_in_the_cost(kw, cost):
    p = params_33(**kw)
    pf = LinearPrice(500.0, 0.01)
    grid = uniform_grid(p.T, 1000)
    dear = _path(params_33(**{**kw, "alpha": kw["alpha"] * cost}), pf, grid)
    cheap = _path(p, pf, grid)
    assert np.all(dear <= cheap + 1e-9 * p.X0)


@DRAWS
@given(kw=draw_params, linear=st.booleans(), level=st.floats(0.3, 3.0))
def test_price_stays_above_cost_when_installation_pays(kw, linear, level):
    p = params_33(**kw)
    pf = LinearPrice(500.0 * level, 0.01) if linear else InversePrice(6.5e6 * level)
    assume(check_assumption(p, pf).holds)
    sol = shoot(p, pf, grid=uniform_grid(p.T, 1000))
    rep = verify_lemmas(sol, p, pf)
    assert rep.price_above_cost, rep
    assert rep.lower_bound, rep


@DRAWS
@given(levels=st.integers(1, 30), x_end=st.floats(0.2, 1.0), scale=st.floats(0.0, 0.9),
       seed=st.integers(0, 2 ** 31))
def test_transport_conserves_mass_and_sign(levels, x_end, scale, seed):
    p = params_33(T=2.0)
    pf = LinearPrice(500.0, 0.01)
    g = make_grids(p, pf, n_t=201, n_x=101)
    m0 = build_initial_density(p, g, TruncatedExponential(levels, x_end * p.X0))
    # random non-negative installation rates kept under the CFL bound
    rng = np.random.default_rng(seed)
    room = g.dx / g.dt - p.delta * g.x_max
    control = scale * max(room, 0.0) * rng.random((g.n_t, g.n_x))
    dens = fp_forward(p, control, g, m0)
    assert np.max(np.abs(dens.mass - 1.0)) <= 1e-9
    assert dens.m.min() >= -1e-12
