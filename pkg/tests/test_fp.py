import math

import numpy as np
import pytest

from mfgcap.errors import GridError, SchemeFault
from mfgcap.mfg import Dirac, make_grids
from mfgcap.mfg.density import (CustomTable, TruncatedExponential, build_initial_density,
                                fp_forward, initial_density_from_dict)
from mfgcap.errors import ValidationError
from mfgcap.model import LinearPrice

from conftest import params_33, params_432


def _setup(n_t=801, n_x=201, **kw):
    p = params_432(**kw)
    pf = LinearPrice(2.0, 1.0)
    return p, make_grids(p, pf, n_t=n_t, n_x=n_x)


def test_dirac_registration_keeps_mass_and_mean():
    p, g = _setup()
    m0 = build_initial_density(p, g, Dirac(0.3337))
    assert m0.sum() * g.dx == pytest.approx(1.0, abs=1e-14)
    assert (m0 @ g.x) * g.dx == pytest.approx(0.3337, rel=1e-13)


def test_truncated_exponential_mean_and_layouts():
    p = params_33()
    for layout in ("mass", "capacity"):
        pos, w = TruncatedExponential(10, layout=layout).atoms(p)
        assert w.sum() == pytest.approx(1.0)
        assert pos @ w == pytest.approx(p.X0 / (p.N + 1), rel=1e-12)
    pos, w = TruncatedExponential(10, layout="capacity").atoms(p)
    assert np.all(np.diff(pos) < 0)  # shares decrease with the level index


def test_m0_from_dict_and_errors():
    assert isinstance(initial_density_from_dict({"kind": "dirac", "x0": 1.0}), Dirac)
    with pytest.raises(ValidationError):
        initial_density_from_dict({"kind": "gaussian"})
    with pytest.raises(ValidationError):
        CustomTable([1.0, 2.0], [1.0]).atoms(params_432())


def test_atom_beyond_xmax():
    p, g = _setup()
    with pytest.raises(GridError):
        build_initial_density(p, g, Dirac(10.0))


def test_pure_decay_moment_identity():
    p, g = _setup()
    m0 = build_initial_density(p, g, Dirac(0.5))
    d = fp_forward(p, np.zeros((g.n_t, g.n_x)), g, m0)
    assert np.max(np.abs(d.mass - 1.0)) <= 1e-12
    assert d.m.min() >= 0.0
    mean = d.mean(g.x)
    assert np.max(np.abs(mean - 0.5 * np.exp(-p.delta * g.t))) < 1e-3


def test_constant_control_moment_identity():
    # d xbar/dt = -delta xbar + nu while the mass stays away from the edges
    p, g = _setup()
    nu = 0.2
    m0 = build_initial_density(p, g, CustomTable([0.2, 0.3], [1.0, 2.0]))
    d = fp_forward(p, np.full((g.n_t, g.n_x), nu), g, m0)
    x0 = (0.2 + 0.6) / 3
    exact = (x0 - nu / p.delta) * np.exp(-p.delta * g.t) + nu / p.delta
    assert np.max(np.abs(d.mean(g.x) - exact)) < 2e-3
    assert np.max(np.abs(d.mass - 1.0)) <= 1e-12


def test_face_control_is_equivalent_to_averaged_nodes(rng):
    p, g = _setup(n_t=201, n_x=51)
    ctrl = rng.uniform(0, 0.3, size=(g.n_t, g.n_x))
    m0 = build_initial_density(p, g, Dirac(0.4))
    a = fp_forward(p, ctrl, g, m0).m
    b = fp_forward(p, 0.5 * (ctrl[:, 1:] + ctrl[:, :-1]), g, m0, at_faces=True).m
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_cfl_violation_names_required_nt():
    p, g = _setup(n_t=11, n_x=401)
    m0 = build_initial_density(p, g, Dirac(0.5))
    with pytest.raises(GridError) as err:
        fp_forward(p, np.full((g.n_t, g.n_x), 5.0), g, m0)
    need = err.value.required_n_t
    g2 = make_grids(p, LinearPrice(2, 1), n_t=need, n_x=401)
    fp_forward(p, np.full((g2.n_t, g2.n_x), 5.0), g2, m0)


def test_sigma_zero_drift_preserves_mean():
    p, g = _setup(n_t=801, n_x=401, delta=1e-12)
    m0 = build_initial_density(p, g, Dirac(0.4))
    d = fp_forward(p, np.zeros((g.n_t, g.n_x)), g, m0, sigma=0.3)
    assert np.max(np.abs(d.mass - 1.0)) <= 1e-9
    assert d.m.min() >= -1e-12
    assert np.max(np.abs(d.mean(g.x) - 0.4)) < 5 * (g.dx + g.dt)
    # delta must stay positive, 1e-12 is zero for all practical purposes
    # the density actually spreads
    var = d.m[-1] @ (g.x - 0.4) ** 2 * g.dx
    assert var > 1e-3


def test_sigma_zero_is_bitwise_identical(rng):
    p, g = _setup(n_t=201, n_x=51)
    ctrl = rng.uniform(0, 0.3, size=(g.n_t, g.n_x))
    m0 = build_initial_density(p, g, Dirac(0.4))
    a = fp_forward(p, ctrl, g, m0).m
    b = fp_forward(p, ctrl, g, m0, sigma=0.0).m
    assert np.array_equal(a, b)


def test_negative_density_is_reported():
    p, g = _setup(n_t=201, n_x=51)
    m0 = build_initial_density(p, g, Dirac(0.4))
    m0[3] = -1.0
    with pytest.raises(SchemeFault):
        fp_forward(p, np.zeros((g.n_t, g.n_x)), g, m0)
