import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from twosphere.coeff_cell import (CoefficientField, ConvergenceError, arithmetic_mean_tensor,
                                  builtin_field, builtin_potential, harmonic_mean_tensor,
                                  homogenize, solve_corrector, solve_corrector_dual,
                                  solve_potential_cell, tensor_field)

SQRT3 = np.sqrt(3.0)


def laminate_a(y):
    return 2 + np.sin(2 * np.pi * y)


def harmonic_mean_by_quadrature():
    inv, _ = integrate.quad(lambda y: 1 / laminate_a(y), 0, 1, epsabs=1e-14)
    return 1 / inv


def test_quadrature_oracle_is_sqrt3():
    assert harmonic_mean_by_quadrature() == pytest.approx(SQRT3, rel=1e-12)


def test_one_dimensional_laminate_corrector_has_known_derivative():
    f = builtin_field("laminate", 1)
    chi = solve_corrector(f, 0, resolution=1024)
    assert chi.residual <= 1e-10
    assert abs(chi.mean()) < 1e-14
    faces = (np.arange(1024) + 0.5) / 1024
    # a (1 + chi') is the constant flux a_hat
    np.testing.assert_allclose(chi.grad[0], SQRT3 / laminate_a(faces) - 1, atol=1e-9)


def test_two_dimensional_laminate_tensor():
    f = builtin_field("laminate", 2)
    T = homogenize(f, resolution=256)
    np.testing.assert_allclose(T.matrix, np.diag([harmonic_mean_by_quadrature(), 2.0]), atol=1e-9)


@pytest.mark.parametrize("name", ["aniso", "checker"])
def test_two_dimensional_tensors_lie_between_reuss_and_voigt(name):
    f = builtin_field(name, 2)
    T = homogenize(f, resolution=64)
    voigt = arithmetic_mean_tensor(f, n=256)
    reuss = harmonic_mean_tensor(f, n=256)
    assert np.linalg.eigvalsh(voigt - T.matrix).min() > -1e-8
    assert np.linalg.eigvalsh(T.matrix - reuss).min() > -1e-8
    assert T.identity_defect() < 1e-12


def test_checker_is_isotropic_by_symmetry():
    T = homogenize(builtin_field("checker", 2), resolution=64)
    assert T.matrix[0, 0] == pytest.approx(T.matrix[1, 1], rel=1e-10)
    assert abs(T.matrix[0, 1]) < 1e-10


def test_homogenization_is_linear_in_the_field():
    f = builtin_field("aniso", 2)
    T = homogenize(f, resolution=32)
    T3 = homogenize(f.scaled(3.0), resolution=32)
    np.testing.assert_allclose(T3.matrix, 3 * T.matrix, rtol=1e-9)


def test_constant_field_homogenizes_to_itself():
    A = np.array([[2.0, 0.3], [0.3, 1.5]])
    T = homogenize(tensor_field(A), resolution=16)
    np.testing.assert_allclose(T.matrix, A, atol=1e-12)


def test_travelling_wave_corrector_converges_in_time():
    f = builtin_field("travelling", 1)
    chi = solve_corrector(f, 0, resolution=(32, 64))
    assert chi.time_dependent
    assert chi.residual <= 1e-8
    assert 1 <= chi.periods <= 50
    T = homogenize(f, [chi])
    assert harmonic_mean_by_quadrature() - 1e-3 <= T.matrix[0, 0] <= 2.0 + 1e-3


def test_dual_corrector_is_corrector_of_reversed_field():
    f = builtin_field("travelling", 1)
    dual = solve_corrector_dual(f, 0, resolution=(32, 64))
    rev = CoefficientField(1, lambda y, s: f(y, -s), f.mu, f.tau, f.lam, True, "manual")
    direct = solve_corrector(rev, 0, resolution=(32, 64))
    np.testing.assert_allclose(dual.values, direct.values, atol=1e-12)
    lam = builtin_field("laminate", 1)
    assert lam.reversed() is lam


def test_corrector_gradient_interpolation():
    chi = solve_corrector(builtin_field("laminate", 1), 0, resolution=512)
    y = np.array([[0.1], [0.37], [1.37]])
    g = chi.grad_at(y)[:, 0]
    np.testing.assert_allclose(g, SQRT3 / laminate_a(y[:, 0]) - 1, atol=1e-4)
    assert g[1] == pytest.approx(g[2], abs=1e-12)


def test_builtins_satisfy_invariants():
    for name, d in [("identity", 2), ("constant", 1), ("laminate", 1), ("even_laminate", 1),
                    ("travelling", 1), ("checker", 2), ("aniso", 2)]:
        report = builtin_field(name, d).check_invariants()
        assert report["symmetry"] == 0


def test_invariant_checks_reject_bad_fields():
    skew = CoefficientField(2, lambda y, s: np.broadcast_to([[1.0, 0.2], [0.0, 1.0]], y.shape[:-1] + (2, 2)),
                            0.5)
    with pytest.raises(ValueError, match="symmetric"):
        skew.check_invariants()
    drift = CoefficientField(1, lambda y, s: (1.5 + 0.1 * y)[..., None], 0.1)
    with pytest.raises(ValueError, match="periodic"):
        drift.check_invariants()
    weak = CoefficientField(1, lambda y, s: np.full(y.shape[:-1] + (1, 1), 0.1), 0.5)
    with pytest.raises(ValueError, match="ellipticity"):
        weak.check_invariants()


def test_constructor_and_builtin_validation():
    with pytest.raises(ValueError):
        CoefficientField(1, lambda y, s: y, 1.5)
    with pytest.raises(ValueError):
        builtin_field("laminate", 1).scaled(0.0)
    with pytest.raises(ValueError, match="unknown field"):
        builtin_field("zebra", 1)
    with pytest.raises(ValueError, match="does not take"):
        builtin_field("laminate", 1, width=2.0)
    with pytest.raises(ValueError):
        builtin_field("laminate", 1, mean=1.0, amp=1.0)
    with pytest.raises(ValueError):
        solve_corrector(builtin_field("laminate", 1), 0, resolution=4)
    with pytest.raises(ValueError):
        solve_corrector(builtin_field("laminate", 1), 1)


def test_period_iteration_cap_is_reported():
    f = builtin_field("travelling", 1)
    with pytest.raises(ConvergenceError) as info:
        solve_corrector(f, 0, resolution=(16, 16), max_periods=1, tol=1e-14)
    assert info.value.residual > 0


def test_cos_potential_cell_solution_is_exact():
    cell = solve_potential_cell(builtin_potential("cos", 1, amp=1.0), resolution=64)
    z = np.arange(64) / 64
    # Laplace psi = -cos(2 pi z)  =>  psi = cos(2 pi z) / (4 pi^2)
    np.testing.assert_allclose(cell.psi, np.cos(2 * np.pi * z) / (4 * np.pi**2), atol=1e-8)
    assert np.max(np.abs(cell.psi)) == pytest.approx(0.02533030, abs=1e-8)
    assert cell.mean_V == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3))
def test_constant_potential_has_trivial_cell_solution(c):
    cell = solve_potential_cell(builtin_potential("constant", 2, value=c), resolution=16)
    assert cell.mean_V == pytest.approx(c)
    assert np.max(np.abs(cell.psi)) < 1e-14


def test_potential_accepts_arrays_and_callables():
    z = np.arange(32) / 32
    from_array = solve_potential_cell(np.sin(2 * np.pi * z) + 0.5)
    from_callable = solve_potential_cell(lambda p: np.sin(2 * np.pi * p[..., 0]) + 0.5, resolution=(32,))
    np.testing.assert_allclose(from_array.psi, from_callable.psi, atol=1e-15)
    assert from_array.mean_V == pytest.approx(0.5)
    with pytest.raises(ValueError):
        solve_potential_cell(np.ones(4))
