import numpy as np
import pytest
from scipy import integrate

from twosphere.coeff_cell import builtin_field, builtin_potential, homogenize
from twosphere.geometry import Ellipsoid, factor_S
from twosphere.pdesolve import (Cylinder, GridSolution, caccioppoli_check, cylinder_sup,
                                default_steps, generate_ensemble, solve_cylinder, step_residual)

IDENT = builtin_field("identity", 1)
LAM = builtin_field("laminate", 1)


def test_constant_data_stays_constant():
    sol = solve_cylinder(LAM, 0.1, Cylinder(1.0, 0.0, 0.05), lambda x: 3.0 + 0 * x[..., 0],
                         lambda x, t: 3.0 + 0 * x[..., 0])
    assert np.max(np.abs(sol.values - 3.0)) <= 1e-12


def test_quadratic_caloric_polynomial_is_reproduced():
    u = lambda x, t: x[..., 0] ** 2 + 2 * t
    sol = solve_cylinder(IDENT, 0.0, Cylinder(1.0, 0.0, 0.25), lambda x: u(x, 0.0), u,
                         h=1 / 128, k=1 / 4096)
    exact = u(sol.points(), sol.times[-1])
    assert np.max(np.abs(sol.values[-1] - exact)) <= 1e-4


def test_laminate_steady_state():
    eps = 0.1
    a = lambda x: 2.0 + np.sin(2 * np.pi * x / eps)

    fine = np.linspace(-1.0, 1.0, 200_001)
    table = integrate.cumulative_simpson(1 / a(fine), x=fine, initial=0.0)

    def steady(x, t=0.0):
        return np.interp(np.asarray(x)[..., 0], fine, table)

    sol = solve_cylinder(LAM, eps, Cylinder(1.0, 0.0, 0.01), steady, steady, h=eps / 64)
    exact = steady(sol.points())
    assert np.max(np.abs(sol.values[-1] - exact)) <= 1e-5 * np.max(np.abs(exact)) + 1e-5


def test_solution_is_linear_in_the_data():
    dom = Cylinder(1.0, 0.0, 0.02)
    f = lambda x, t: np.cos(np.pi * x[..., 0] / 2) * (1 + t)
    g = lambda x, t: x[..., 0] ** 3
    u1 = solve_cylinder(LAM, 0.1, dom, lambda x: f(x, 0), f)
    u2 = solve_cylinder(LAM, 0.1, dom, lambda x: g(x, 0), g)
    u3 = solve_cylinder(LAM, 0.1, dom, lambda x: 2 * f(x, 0) - 5 * g(x, 0),
                        lambda x, t: 2 * f(x, t) - 5 * g(x, t))
    np.testing.assert_allclose(u3.values, 2 * u1.values - 5 * u2.values, atol=1e-12)


def test_maximum_principle():
    rng = np.random.default_rng(3)
    c = rng.normal(size=5)
    init = lambda x: sum(ci * np.sin((i + 1) * np.pi * (x[..., 0] + 1) / 2) for i, ci in enumerate(c))
    sol = solve_cylinder(LAM, 0.05, Cylinder(1.0, 0.0, 0.05), init, lambda x, t: 0 * x[..., 0])
    bound = np.max(np.abs(sol.values[0]))
    assert np.max(np.abs(sol.values)) <= bound * (1 + 1e-12)


def test_refinement_in_eps_changes_little_for_smooth_data():
    # homogenized limit: the two oscillation scales give nearby smooth solutions
    dom = Cylinder(1.0, 0.0, 0.1)
    f = lambda x, t: np.cos(np.pi * x[..., 0] / 2)
    a = solve_cylinder(LAM, 0.1, dom, lambda x: f(x, 0), f, save_times=[0.1])
    b = solve_cylinder(LAM, 0.05, dom, lambda x: f(x, 0), f, save_times=[0.1])
    xs = np.linspace(-0.5, 0.5, 11)[:, None]
    diff = np.max(np.abs(a.interpolate(xs, 0.1) - b.interpolate(xs, 0.1)))
    assert diff <= 0.1


def test_resolution_and_setup_errors():
    dom = Cylinder(1.0, 0.0, 0.01)
    zero = lambda x, t=0: 0 * x[..., 0]
    with pytest.raises(ValueError, match="does not resolve"):
        solve_cylinder(LAM, 0.1, dom, zero, zero, h=0.05)
    with pytest.raises(ValueError, match="does not resolve"):
        solve_cylinder(LAM, 0.1, dom, zero, zero, k=1e-2)
    with pytest.raises(ValueError, match="parabolic corner"):
        solve_cylinder(LAM, 0.1, dom, lambda x: 1 + 0 * x[..., 0], zero)
    with pytest.raises(ValueError, match="dimension"):
        solve_cylinder(LAM, 0.1, Cylinder(1.0, 0.0, 0.01, d=2), zero, zero)
    with pytest.raises(ValueError, match="R > 0"):
        Cylinder(0.0, 0.0, 1.0)
    with pytest.raises(ValueError, match="save time"):
        solve_cylinder(LAM, 0.1, dom, zero, zero, save_times=[0.5])


def test_nan_guard():
    with pytest.raises(FloatingPointError):
        GridSolution(1, 0.1, np.zeros(1), 0.1, (2,), np.array([0.0]), 0.1, np.array([[np.nan, 0.0]]))


def test_default_steps():
    assert default_steps(LAM, 0.1) == pytest.approx((0.1 / 16, 0.01 / 32))
    assert default_steps(IDENT, 0.1) == (0.02, 1e-3)


def test_two_dimensional_harmonic_polynomial():
    f = builtin_field("identity", 2)
    u = lambda x, t: x[..., 0] ** 2 - x[..., 1] ** 2 + x[..., 0] * x[..., 1]
    sol = solve_cylinder(f, 0.0, Cylinder(1.0, 0.0, 0.02, d=2), lambda x: u(x, 0), u, h=0.1, k=0.005)
    assert np.max(np.abs(sol.values[-1] - u(sol.points(), 0))) <= 1e-10


def test_two_dimensional_time_dependent_field_uses_iterative_path():
    f = builtin_field("travelling", 2)
    one = lambda x, t=0: 1.0 + 0 * x[..., 0]
    sol = solve_cylinder(f, 0.25, Cylinder(0.5, 0.0, 0.004, d=2), one, one)
    assert np.max(np.abs(sol.values - 1.0)) <= 1e-8
    assert step_residual(f, sol, len(sol.times) - 1) <= 1e-8


def test_step_residual_is_small_for_solver_output():
    f = lambda x, t: np.cos(np.pi * x[..., 0] / 2) * np.exp(-t)
    sol = solve_cylinder(LAM, 0.1, Cylinder(1.0, 0.0, 0.01), lambda x: f(x, 0), f)
    n = len(sol.times) - 1
    assert step_residual(LAM, sol, n) <= 1e-10
    # only the first and the last two levels are saved
    with pytest.raises(ValueError, match="consecutive"):
        step_residual(LAM, sol, 1)


def test_potential_gauge_on_constant_potential():
    # with V = 2, exp(-2t) (x^2 + 2t) solves u_t - u'' + V u = 0 and the gauge makes it exact
    V = builtin_potential("constant", 1, value=2.0)
    f = lambda x, t: np.exp(-2 * t) * (x[..., 0] ** 2 + 2 * t)
    sol = solve_cylinder(IDENT, 0.1, Cylinder(1.0, 0.0, 0.05), lambda x: f(x, 0), f, potential=V,
                         h=1 / 64, k=1 / 2048)
    assert sol.potential_mean == pytest.approx(2.0)
    assert np.max(np.abs(sol.values[-1] - f(sol.points(), sol.times[-1]))) <= 1e-10


def test_ensemble_is_deterministic_and_normalised():
    dom = Cylinder(0.5, -0.1, 0.0)
    a = generate_ensemble(LAM, 0.1, dom, 4, seed=11)
    b = generate_ensemble(LAM, 0.1, dom, 4, seed=11)
    c = generate_ensemble(LAM, 0.1, dom, 4, seed=12)
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u.values, v.values)
    assert not np.allclose(a[0].values, c[0].values)
    assert [u.meta["designed"] for u in a] == [False, False, False, True]
    for u in a:
        assert np.max(np.abs(u.values)) <= 1 + 1e-9
    with pytest.raises(ValueError):
        generate_ensemble(LAM, 0.1, dom, 0, seed=1)


def test_caccioppoli_closed_form():
    # u = x on the identity field: energy = 2 * 0.05 r3 * r3^2, sup = r3
    sol = solve_cylinder(IDENT, 0.0, Cylinder(1.5, -1.0, 0.0), lambda x: x[..., 0],
                         lambda x, t: x[..., 0], h=1 / 80, k=1 / 40, save_every=1)
    T = factor_S(np.eye(1))
    rep = caccioppoli_check(sol, T, 1.0, 0.0)
    assert rep.energy == pytest.approx(0.1, rel=1e-10)
    assert rep.sup == pytest.approx(1.0, abs=1 / 80)
    assert rep.C_obs == pytest.approx(0.1 / rep.sup**2, rel=1e-12)
    assert cylinder_sup(sol, Ellipsoid(T, 0.5), -1.0, 0.0) <= 0.5
    with pytest.raises(ValueError, match="not inside"):
        caccioppoli_check(sol, T, 1.2, 0.0)


def test_homogenized_tensor_in_interpolation(laminate_tensor):
    assert laminate_tensor.matrix[0, 0] == pytest.approx(np.sqrt(3), rel=1e-8)
