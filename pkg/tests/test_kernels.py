import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from twosphere.coeff_cell import builtin_field
from twosphere.geometry import factor_S
from twosphere.kernels import (default_probes, gamma0, gamma_eps_numeric, grad_gamma0,
                               kernel_gap_report, kernel_mass)

T1 = factor_S(np.eye(1))
T_ANISO = factor_S(np.array([[1.7, 0.4], [0.4, 0.9]]))


def test_peak_value_in_one_dimension():
    assert gamma0(T1, [0.0], 1.0, [0.0], 0.0) == pytest.approx(1 / (2 * np.sqrt(np.pi)))
    assert gamma0(T1, [0.0], 1.0, [0.0], 0.0) == pytest.approx(0.28209479, abs=1e-8)


def test_unit_mass_by_quadrature():
    val, _ = integrate.quad(lambda x: gamma0(T1, [x], 0.7, [0.3], 0.0), -np.inf, np.inf, epsabs=1e-13)
    assert val == pytest.approx(1.0, abs=1e-8)
    val2, _ = integrate.dblquad(lambda b, a: gamma0(T_ANISO, [a, b], 0.5, [0.1, -0.2], 0.0),
                                -12, 12, -12, 12, epsabs=1e-12)
    assert val2 == pytest.approx(1.0, abs=1e-8)


def test_monotone_decay_away_from_source():
    x = np.linspace(0, 6, 50)[:, None]
    g = gamma0(T1, x, 1.0, [0.0], 0.0)
    assert np.all(np.diff(g) < 0)


def test_time_order_is_enforced():
    with pytest.raises(ValueError, match="t > s"):
        gamma0(T1, [0.0], 1.0, [0.0], 1.0)
    with pytest.raises(ValueError, match="t > s"):
        grad_gamma0(T1, [0.0], 0.0, [0.0], 1.0)


def test_gradient_examples():
    assert np.all(grad_gamma0(T_ANISO, [0.3, 0.1], 1.0, [0.3, 0.1], 0.0) == 0)
    g = grad_gamma0(T1, [0.0], 1.0, [2.0], 0.0)
    # gamma0 = 0.28209479 e^-1; factor (x - y)/(2 tau) = -1
    assert abs(g[0]) == pytest.approx(0.28209479 * np.exp(-1.0), abs=1e-8)
    assert abs(g[0]) == pytest.approx(0.10377687, abs=1e-8)


def test_gradient_matches_central_differences(rng):
    worst = 0.0
    for _ in range(20):
        x, y = rng.normal(size=2), rng.normal(size=2)
        tau = rng.uniform(0.3, 2.0)
        g = grad_gamma0(T_ANISO, x, tau, y, 0.0)
        h = 1e-5
        fd = np.array([(gamma0(T_ANISO, x, tau, y + h * e, 0.0) - gamma0(T_ANISO, x, tau, y - h * e, 0.0))
                       / (2 * h) for e in np.eye(2)])
        worst = max(worst, np.max(np.abs(fd - g)) / np.max(np.abs(g)))
        np.testing.assert_allclose(grad_gamma0(T_ANISO, x, tau, y, 0.0, wrt="x"), -g)
    assert worst <= 1e-6


def test_solves_the_homogenized_equation():
    x, t, h, k = np.array([0.4, -0.3]), 0.6, 1e-3, 1e-5
    A = T_ANISO.matrix

    def G(p, tt):
        return gamma0(T_ANISO, p, tt, [0.0, 0.0], 0.0)

    dt = (G(x, t + k) - G(x, t - k)) / (2 * k)
    e = np.eye(2)
    hess = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            hess[i, j] = (G(x + h * e[i] + h * e[j], t) - G(x + h * e[i] - h * e[j], t)
                          - G(x - h * e[i] + h * e[j], t) + G(x - h * e[i] - h * e[j], t)) / (4 * h * h)
    assert abs(dt - np.sum(A * hess)) <= 1e-4 * abs(dt)


def test_semigroup_property():
    x, y, s, r, t = 0.3, -0.4, 0.0, 0.35, 0.8
    val, _ = integrate.quad(lambda z: gamma0(T1, [x], t, [z], r) * gamma0(T1, [z], r, [y], s),
                            -np.inf, np.inf, epsabs=1e-13)
    assert val == pytest.approx(float(gamma0(T1, [x], t, [y], s)), rel=1e-4)


def test_complex_continuation_agrees_on_real_axis():
    real = gamma0(T1, [[0.7]], 1.2, [0.1], 0.0)
    cplx = gamma0(T1, [[0.7 + 0j]], 1.2, [0.1], 0.0)
    assert np.iscomplexobj(cplx)
    np.testing.assert_allclose(cplx.real, real, rtol=1e-15)


@pytest.mark.parametrize("tau", [0.05, 0.25])
def test_identity_numeric_kernel_matches_gaussian(tau):
    sol = gamma_eps_numeric(builtin_field("identity", 1), 0.0, [0.0], 0.0, tau)
    exact = gamma0(T1, sol.points(), tau, [0.0], 0.0)
    assert np.max(np.abs(sol.values[-1] - exact)) <= 2e-3
    mass = kernel_mass(sol)
    assert np.all((mass >= 0.999) & (mass <= 1.001))


def test_even_field_gives_even_kernel():
    sol = gamma_eps_numeric(builtin_field("even_laminate", 1), 0.1, [0.0], 0.0, 0.05)
    u = sol.values[-1]
    assert np.max(np.abs(u - u[::-1])) <= 1e-8 * np.max(u)


def test_numeric_kernel_is_linear_in_mass():
    f = builtin_field("laminate", 1)
    a = gamma_eps_numeric(f, 0.1, [0.0], 0.0, 0.02)
    b = gamma_eps_numeric(f, 0.1, [0.0], 0.0, 0.02, mass=3.0)
    np.testing.assert_allclose(b.values, 3 * a.values, rtol=1e-13, atol=1e-300)


def test_numeric_kernel_validates_resolution():
    with pytest.raises(ValueError, match="resolve"):
        gamma_eps_numeric(builtin_field("laminate", 1), 0.1, [0.0], 0.0, 0.05, h=0.01)
    with pytest.raises(ValueError):
        gamma_eps_numeric(builtin_field("laminate", 1), 0.1, [0.0, 0.0], 0.0, 0.05)


def test_identity_report_is_degenerate():
    rep = kernel_gap_report(builtin_field("identity", 1), T1, [0.1, 0.05],
                            probes=[((0.1,), 0.25, (0.0,), 0.0), ((0.3,), 0.25, (0.0,), 0.0)])
    assert rep.degenerate and rep.ratios is None and rep.passed
    assert max(rep.gaps) < 2e-3
    assert rep.kappa > 0
    assert all("bound_envelope" in r for r in rep.rows)


def test_eps_list_must_be_separated():
    with pytest.raises(ValueError, match="factor 2"):
        kernel_gap_report(builtin_field("laminate", 1), T1, [0.1, 0.07])


def test_probes_must_be_nodes_and_causal():
    f = builtin_field("laminate", 1)
    with pytest.raises(ValueError, match="grid node"):
        kernel_gap_report(f, factor_S(np.array([[np.sqrt(3)]])), [0.1],
                          probes=[((0.001,), 0.05, (0.0,), 0.0)], grad_probes=[])
    with pytest.raises(ValueError, match="s < t"):
        kernel_gap_report(f, T1, [0.1], probes=[((0.0,), 0.0, (0.0,), 0.0)])


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.01, 0.2))
def test_default_probes_cover_the_ellipsoid(tau, spacing):
    T = factor_S(np.array([[np.sqrt(3.0)]]))
    probes = default_probes(T, tau=tau, spacing=spacing)
    xs = np.array([p[0][0] for p in probes])
    assert np.all(np.abs(xs) < 3 ** 0.25)
    assert np.all([p[1] == tau for p in probes])
    np.testing.assert_allclose(xs, -xs[::-1])
