import math

import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from mfgcap.model import InversePrice, LinearPrice
from mfgcap.mfg import make_grids
from mfgcap.mfg.value import (BoundaryClosures, a_closed_form, ansatz_install_coeffs,
                              ansatz_value_field, hjb_backward_fd, noninstall_value_inverse,
                              noninstall_value_linear, riccati_A, riccati_roots, stopping_time,
                              threshold_curve, threshold_linear)

from conftest import params_33, params_432


@pytest.fixture
def setup432():
    p = params_432()
    pf = LinearPrice(2.0, 1.0)
    return p, pf, make_grids(p, pf, n_t=1001, n_x=101)


def test_b_closed_form_for_constant_mean(setup432):
    p, pf, g = setup432
    xbar = np.full(g.n_t, 0.05)
    a, b = noninstall_value_linear(p, pf, xbar, g)
    rd = p.r + p.delta
    gconst = p.h * (pf.d1 - p.c - pf.d2 * p.N * 0.05)
    assert np.allclose(b, gconst / rd * (1 - np.exp(-rd * (p.T - g.t))), rtol=1e-10, atol=1e-14)
    rho = p.r + 2 * p.delta
    assert np.allclose(a, -p.h * pf.d2 / rho * (1 - np.exp(-rho * (p.T - g.t))))
    assert a[-1] == 0 and b[-1] == 0
    assert np.all(a[:-1] < 0)


def test_noninstall_value_solves_pde(setup432):
    # V = a x^2 + b x with nobody installing: check dV/dt - rV - delta x Vx + f = 0
    p, pf, g = setup432
    xbar = 0.05 + 0.02 * np.sin(g.t)
    a, b = noninstall_value_linear(p, pf, xbar, g)
    x = 0.37
    V = a * x * x + b * x
    dV = np.gradient(V, g.dt)
    f = p.h * (pf(x + p.N * xbar) - p.c) * x
    res = dV - p.r * V - p.delta * x * (2 * a * x + b) + f
    assert np.max(np.abs(res[5:-5])) < 1e-6


def test_sigma_makes_a_more_negative(setup432):
    p, pf, g = setup432
    a0 = a_closed_form(p, pf, g.t)
    a1 = a_closed_form(p, pf, g.t, sigma=0.2)
    assert np.all(a1[:-1] < a0[:-1])


def test_reduction_mode_kills_a(setup432):
    p, pf, g = setup432
    a, _ = noninstall_value_linear(p, pf, np.zeros(g.n_t), g, reduction=True)
    assert np.all(a == 0)


def test_riccati_against_ode_solver():
    p = params_33(T=5.0)
    kd2 = p.h * 0.01
    ts = 2.0
    rho = p.r + 2 * p.delta
    sol = solve_ivp(lambda t, A: rho * A + kd2 - A ** 2 / p.beta, (ts, 0.0), [0.0],
                    rtol=1e-12, atol=1e-10, dense_output=True, method="DOP853")
    t = np.linspace(0, ts, 41)
    assert np.allclose(riccati_A(p, kd2, t, ts), sol.sol(t)[0], rtol=1e-8, atol=1e-8)
    l1, l2 = riccati_roots(p, kd2)
    assert l1 > 0 > l2
    assert l1 * l2 == pytest.approx(-kd2 / p.beta)
    assert l1 + l2 == pytest.approx(rho)


def test_ansatz_terminal_conditions_and_b_equation(setup432):
    p, pf, g = setup432
    xbar = np.full(g.n_t, 0.01)
    nubar = np.full(g.n_t, 0.02)
    a, b = noninstall_value_linear(p, pf, xbar, g)
    ts = 0.4537
    c = ansatz_install_coeffs(p, pf, xbar, nubar, b, ts, g)
    k = int(ts / g.dt)
    assert c.RB == pytest.approx(np.interp(ts, g.t, b), rel=1e-12)
    assert np.all(c.A[k + 1:] == 0) and np.array_equal(c.B[k + 1:], b[k + 1:])
    # independent oracle: adaptive ODE solve of the B equation
    kappa = p.alpha + p.beta * p.N * 0.02
    gg = p.h * (pf.d1 - p.c - pf.d2 * p.N * 0.01)
    kd2 = p.h * pf.d2

    def rhs(t, y):
        A = riccati_A(p, kd2, t, ts)
        return (p.r + p.delta - A / p.beta) * y - gg + A * kappa / p.beta

    ref = solve_ivp(rhs, (ts, 0.0), [c.RB], rtol=1e-12, atol=1e-14, dense_output=True)
    assert np.max(np.abs(ref.sol(g.t[:k + 1])[0] - c.B[:k + 1])) < 1e-9
    assert np.all(c.A[:k] <= 0)


def test_ansatz_value_field_pieces(setup432):
    p, pf, g = setup432
    xbar = np.full(g.n_t, 0.01)
    nubar = np.zeros(g.n_t)
    a, b = noninstall_value_linear(p, pf, xbar, g)
    c = ansatz_install_coeffs(p, pf, xbar, nubar, b, 0.3, g)
    xs = np.full(g.n_t, 0.5)
    V, Vx = ansatz_value_field(c, xs, g.x)
    j = 80
    assert V[0, j] == pytest.approx(a[0] * g.x[j] ** 2 + b[0] * g.x[j])
    assert Vx[0, 3] == pytest.approx(2 * c.A[0] * g.x[3] + c.B[0])


def test_threshold_linear_formula(setup432):
    p, pf, g = setup432
    a = np.array([-2.0, -1.0, 0.0])
    b = np.array([1.0, 0.05, 0.0])
    nub = np.array([0.1, 0.1, 0.0])
    xs, s = threshold_linear(p, a, b, nub, 1.0)
    kappa = p.alpha + p.beta * p.N * 0.1
    assert xs[0] == pytest.approx((b[0] - kappa) / (-2 * a[0]))
    assert xs[1] == 0.0 and xs[2] == 0.0
    assert stopping_time(np.array([0.0, 1.0, 2.0]), s) == pytest.approx(
        (b[0] - kappa) / ((b[0] - kappa) - (b[1] - kappa)))


def test_threshold_curve_bisection_matches_closed_form(setup432):
    p, pf, g = setup432
    xbar = np.zeros(g.n_t)
    nubar = np.zeros(g.n_t)
    a, b = noninstall_value_linear(p, pf, xbar, g)
    closed = threshold_curve(p, (a, b), nubar, g)
    numeric = threshold_curve(p, lambda k, x: 2 * a[k] * x + b[k], nubar, g)
    assert np.allclose(closed, np.minimum(numeric, g.x_max), atol=1e-8)


def test_inverse_value_zero_cost_zero_others():
    # c = 0 and N xbar = 0: the integrand collapses to exp(-r s)/x
    p = params_33(T=5.0, c=1e-300)
    pf = InversePrice(6.5e6)
    g = make_grids(p, pf, n_t=2001, n_x=11)
    x = np.array([100.0, 5000.0])
    for k in (0, 700):
        val, der = noninstall_value_inverse(p, pf, np.zeros(g.n_t), g, k, x)
        tau = p.T - g.t[k]
        expected = p.h * pf.p * (1 - math.exp(-p.r * tau)) / p.r
        assert val == pytest.approx(np.full(2, expected), rel=1e-6)
        assert np.allclose(der, 0.0, atol=1e-6 * expected / x[0])


def test_inverse_derivative_matches_finite_difference():
    p = params_33(T=5.0)
    pf = InversePrice(6.5e6)
    g = make_grids(p, pf, n_t=2001, n_x=11)
    xbar = 2000.0 + 300 * np.cos(g.t)
    x = np.array([500.0, 3000.0, 20000.0])
    h = 1e-3 * x
    vp, _ = noninstall_value_inverse(p, pf, xbar, g, 100, x + h)
    vm, _ = noninstall_value_inverse(p, pf, xbar, g, 100, x - h)
    _, der = noninstall_value_inverse(p, pf, xbar, g, 100, x)
    assert np.allclose(der, (vp - vm) / (2 * h), rtol=1e-6)
    # cross-check the quadrature itself against scipy at one point
    xb = lambda s: 2000.0 + 300 * math.cos(s)
    t0 = g.t[100]
    rd = p.r + p.delta
    ref = quad(lambda s: math.exp(-rd * (s - t0)) * (pf.p / (p.N * xb(s) + x[1] * math.exp(
        -p.delta * (s - t0))) - p.c), t0, p.T, epsabs=0, epsrel=1e-12)[0] * p.h * x[1]
    val, _ = noninstall_value_inverse(p, pf, xbar, g, 100, x[1:2])
    assert val[0] == pytest.approx(ref, rel=1e-6)


def test_fd_hjb_reproduces_noninstall_closed_form(setup432):
    p, pf, g = setup432
    p = p.replace(alpha=1e6)  # nobody ever installs
    xbar = np.full(g.n_t, 0.02)
    nubar = np.zeros(g.n_t)
    a, b = noninstall_value_linear(p, pf, xbar, g)
    right = a * g.x_max ** 2 + b * g.x_max
    vs = hjb_backward_fd(p, pf, xbar, nubar, g, BoundaryClosures(right, np.zeros(g.n_t)))
    exact = a[:, None] * g.x ** 2 + b[:, None] * g.x
    assert np.max(np.abs(vs.V - exact)) / np.max(np.abs(exact)) < 2e-3
    assert np.all(vs.V[-1] == 0)


def test_fd_hjb_with_installation_is_concave(setup432):
    p, pf, g = setup432
    xbar = np.full(g.n_t, 0.01)
    nubar = np.zeros(g.n_t)
    a, b = noninstall_value_linear(p, pf, xbar, g)
    right = a * g.x_max ** 2 + b * g.x_max
    vs = hjb_backward_fd(p, pf, xbar, nubar, g, BoundaryClosures(right, None))
    d2 = np.diff(vs.V, 2, axis=1)
    assert np.max(d2) <= 1e-8 * np.max(np.abs(vs.V))
    assert np.max(vs.newton_iterations) < 50
    # someone installs near x = 0 early on
    assert vs.Vx[0, 1] > p.alpha
