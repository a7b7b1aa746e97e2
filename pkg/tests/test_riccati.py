"""Integrator and coefficient-system tests against independent oracles.

The quadratic systems have constant-coefficient closed forms obtained by
separation of variables; the coupled correction system is checked against
an adaptive scipy integration at tight tolerance.  None of the oracles
share code with the fixed-step solver.
"""

import math

import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from valexp.riccati import (
    KoCoefficients,
    OdeBlowUpError,
    OdeGrid,
    OdeSystem,
    ea_value_odes,
    integrate_backward,
    integrate_forward,
    ko_correction_odes,
    ko_moment_odes,
    ko_value_odes,
    simpson_integral,
)
from valexp.utility import UtilitySpec

KO_PARAMS = dict(kappa=0.0404, theta=0.117, gamma=0.04395)
EA_PARAMS = dict(kappa=5.0, theta=0.0169, beta=-0.1, gamma=0.1744)


def c_closed_form(co: KoCoefficients, q: float, horizon: float, t):
    """Separated-variables solution of -c' = -q + 2*alpha4*c - alpha2*c**2, c(T)=0.

    In backward time s = T - t the equation is dc/ds = -alpha2*(c-r1)*(c-r2)
    with r12 = (alpha4 +/- sqrt(alpha4**2 - alpha2*q)) / alpha2, and
    c = (r1 - E*r2)/(1 - E) where E = (r1/r2)*exp(-alpha2*(r1-r2)*s).
    """
    a2, a4 = co.alpha2, co.alpha4
    root = math.sqrt(a4**2 - a2 * q)
    r1, r2 = (a4 + root) / a2, (a4 - root) / a2
    s = horizon - np.asarray(t, dtype=float)
    e = (r1 / r2) * np.exp(-a2 * (r1 - r2) * s)
    return (r1 - e * r2) / (1.0 - e)


def ea_b_closed_form(co: KoCoefficients, q: float, horizon: float, t):
    """Same construction for db/ds = alpha4*b - alpha2*b**2/2 - q/2, b(T)=0."""
    a2, a4 = co.alpha2, co.alpha4
    root = math.sqrt(a4**2 - a2 * q)
    r1, r2 = (a4 + root) / a2, (a4 - root) / a2
    s = horizon - np.asarray(t, dtype=float)
    e = (r1 / r2) * np.exp(-0.5 * a2 * (r1 - r2) * s)
    return (r1 - e * r2) / (1.0 - e)


def test_backward_linear_equation():
    grid = integrate_backward(
        OdeSystem(("y",), lambda t, y: (y[0],), (1.0,)), horizon=3.0, n_steps=600
    )
    assert grid.terminal("y") == 1.0
    assert grid.initial("y") == pytest.approx(math.exp(-3.0), rel=1e-11)


def test_forward_logistic_equation():
    grid = integrate_forward(
        OdeSystem(("y",), lambda t, y: (y[0] * (1.0 - y[0]),), (0.5,)),
        horizon=4.0,
        n_steps=400,
    )
    exact = 1.0 / (1.0 + math.exp(-4.0))
    assert grid.terminal("y") == pytest.approx(exact, rel=1e-11)


def test_rk4_order_on_logistic():
    exact = 1.0 / (1.0 + math.exp(-4.0))
    sys = OdeSystem(("y",), lambda t, y: (y[0] * (1.0 - y[0]),), (0.5,))
    errs = [
        abs(integrate_forward(sys, 4.0, n).terminal("y") - exact) for n in (40, 80, 160)
    ]
    assert 14.0 < errs[0] / errs[1] < 18.0
    assert 14.0 < errs[1] / errs[2] < 18.0


def test_blow_up_is_reported_with_time():
    sys = OdeSystem(("y",), lambda t, y: (y[0] * y[0],), (1.0,))
    with pytest.raises(OdeBlowUpError) as exc:
        integrate_forward(sys, 2.0, 200)
    assert 0.5 < exc.value.t_failure <= 2.0


def test_value_equation_matches_separated_solution(spec):
    horizon = 10.0
    grid = ko_value_odes(**KO_PARAMS, beta=0.0, horizon=horizon, spec=spec, n_steps=4000)
    co = KoCoefficients.from_params(**KO_PARAMS, beta=0.0, q=spec.q)
    expected = c_closed_form(co, spec.q, horizon, grid.t_grid)
    np.testing.assert_allclose(grid.values["c"], expected, atol=1e-12)
    assert float(np.min(grid.values["c"])) >= 0.0


def test_value_equation_a_channel_via_quadrature(spec):
    """With theta = 0 the b component vanishes and a integrates alpha3*c/2."""
    horizon, kappa, gamma = 8.0, 0.3, 0.2
    grid = ko_value_odes(kappa, 0.0, 0.0, gamma, horizon, spec, n_steps=4000)
    np.testing.assert_allclose(grid.values["b"], 0.0, atol=1e-15)
    co = KoCoefficients.from_params(kappa, 0.0, 0.0, gamma, spec.q)
    integral, err = quad(
        lambda t: c_closed_form(co, spec.q, horizon, t), 0.0, horizon, limit=200
    )
    assert err < 1e-10
    assert grid.initial("a") == pytest.approx(0.5 * co.alpha3 * integral, rel=1e-10)


def test_square_root_value_equation_closed_form(spec):
    horizon = 10.0
    grid = ea_value_odes(**EA_PARAMS, horizon=horizon, spec=spec, n_steps=4000)
    co = KoCoefficients.from_params(
        EA_PARAMS["kappa"], EA_PARAMS["theta"], EA_PARAMS["beta"], EA_PARAMS["gamma"], spec.q
    )
    expected = ea_b_closed_form(co, spec.q, horizon, grid.t_grid)
    np.testing.assert_allclose(grid.values["b"], expected, atol=1e-12)
    integral, err = quad(
        lambda t: ea_b_closed_form(co, spec.q, horizon, t), 0.0, horizon, limit=200
    )
    assert err < 1e-10
    assert grid.initial("a") == pytest.approx(co.alpha1 * integral, rel=1e-9)


def test_correction_system_against_adaptive_oracle(spec):
    """Full coupled correction system versus scipy's RK45 at tight tolerance."""
    horizon, n = 10.0, 2000
    value = ko_value_odes(**KO_PARAMS, beta=0.0, horizon=horizon, spec=spec, n_steps=2 * n)
    corr = ko_correction_odes(
        KO_PARAMS["kappa"], KO_PARAMS["theta"], KO_PARAMS["gamma"], horizon, spec,
        value.values["b"], value.values["c"], n_steps=n,
    )
    kappa, gamma = KO_PARAMS["kappa"], KO_PARAMS["gamma"]
    co = KoCoefficients.from_params(**KO_PARAMS, beta=0.0, q=spec.q)
    q = spec.q
    kt = kappa * KO_PARAMS["theta"]

    # c has a separated closed form but b does not, so integrate b jointly
    # with the corrections; the oracle then shares no samples with the grid.
    def joint_rhs(t, y):
        b, c1, c2, c4, c5, c6 = y
        c = float(c_closed_form(co, q, horizon, t))
        db = -(co.alpha4 * b + co.alpha1 * c - co.alpha2 * b * c)
        btil = kt - gamma**2 * b
        ctil = kappa + gamma**2 * c
        return [
            db,
            -(btil * c4 + gamma**2 * c5),
            -(btil * c6 - kappa * c2),
            -(q * c2 - ctil * c4 + 2.0 * btil * c5),
            -(q * c6 - 2.0 * ctil * c5),
            -(-(kappa + ctil) * c6 - 1.0),
        ]

    sol = solve_ivp(
        joint_rhs, (horizon, 0.0), [0.0] * 6, rtol=1e-11, atol=1e-13, dense_output=True
    )
    assert sol.success
    at0 = sol.sol(0.0)
    for i, name in enumerate(("C1", "C2", "C4", "C5", "C6"), start=1):
        assert corr.initial(name) == pytest.approx(at0[i], rel=1e-8, abs=1e-10), name


def test_moment_system_degenerate_oracle(spec):
    """gamma = 0 with zero value grids gives textbook mean-reversion moments."""
    kappa, theta, lam0, horizon, n = 0.7, 0.25, 0.9, 6.0, 1500
    zeros = np.zeros(2 * n + 1)
    grid = ko_moment_odes(kappa, theta, 0.0, horizon, spec, zeros, zeros, lam0, n_steps=n)
    t = grid.t_grid
    q = spec.q
    m1 = theta + (lam0 - theta) * np.exp(-kappa * t)
    m1p = q * (theta * (1.0 - np.exp(-kappa * t)) / kappa + (lam0 - theta) * t * np.exp(-kappa * t))
    np.testing.assert_allclose(grid.values["m1"], m1, atol=1e-12)
    np.testing.assert_allclose(grid.values["m1p"], m1p, atol=1e-11)
    # Zero diffusion keeps the factor deterministic, so m2 = m1**2 exactly.
    np.testing.assert_allclose(grid.values["m2"], m1**2, atol=1e-11)


def test_moment_system_self_convergence(spec):
    horizon = 10.0
    value = ko_value_odes(**KO_PARAMS, beta=0.0, horizon=horizon, spec=spec, n_steps=4000)
    b2, c2 = value.values["b"], value.values["c"]
    coarse = ko_moment_odes(
        KO_PARAMS["kappa"], KO_PARAMS["theta"], KO_PARAMS["gamma"], horizon, spec,
        b2, c2, 0.1, n_steps=1000,
    )
    fine = ko_moment_odes(
        KO_PARAMS["kappa"], KO_PARAMS["theta"], KO_PARAMS["gamma"], horizon, spec,
        b2, c2, 0.1, n_steps=2000,
    )
    for name in coarse.values:
        assert coarse.terminal(name) == pytest.approx(fine.terminal(name), abs=1e-8)


def test_grid_validation_and_accessors():
    t = np.linspace(0.0, 2.0, 5)
    grid = OdeGrid(t_grid=t, values={"y": 3.0 * t}, step=0.5)
    assert grid.n_steps == 4
    assert grid.horizon == 2.0
    assert grid.initial("y") == 0.0
    assert grid.terminal("y") == 6.0
    assert grid.interp("y", 0.25) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        OdeGrid(t_grid=np.array([0.0, 0.4, 1.0]), values={"y": np.zeros(3)}, step=0.5)
    with pytest.raises(ValueError):
        OdeGrid(t_grid=np.array([0.1, 0.6, 1.1]), values={"y": np.zeros(3)}, step=0.5)
    with pytest.raises(ValueError):
        OdeGrid(t_grid=t, values={"y": np.zeros(7)}, step=0.5)
    with pytest.raises(ValueError):
        grid.values["y"][0] = 1.0


def test_grid_csv_round_trip(tmp_path):
    t = np.linspace(0.0, 1.0, 11)
    grid = OdeGrid(t_grid=t, values={"u": np.sin(t), "w": t**2}, step=0.1)
    path = tmp_path / "grid.csv"
    grid.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "t,u,w"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 0], t)
    np.testing.assert_array_equal(data[:, 1], grid.values["u"])
    np.testing.assert_array_equal(data[:, 2], grid.values["w"])


def test_system_validation():
    with pytest.raises(ValueError):
        OdeSystem(("a", "b"), lambda t, y: (0.0,), (0.0,))


def test_simpson_rule():
    t = np.linspace(0.0, 1.0, 9)
    assert simpson_integral(t**3, 0.125) == pytest.approx(0.25, abs=1e-15)
    exact = 1.0 - math.cos(1.0)
    err_coarse = abs(simpson_integral(np.sin(np.linspace(0, 1, 17)), 1 / 16) - exact)
    err_fine = abs(simpson_integral(np.sin(np.linspace(0, 1, 33)), 1 / 32) - exact)
    assert 12.0 < err_coarse / err_fine < 20.0
    with pytest.raises(ValueError):
        simpson_integral(np.zeros(4), 0.1)
    with pytest.raises(ValueError):
        simpson_integral(np.zeros(2), 0.1)
