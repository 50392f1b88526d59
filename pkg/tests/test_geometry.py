import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from twosphere.geometry import Ellipsoid, ellipsoid_norm, factor_S, inclusion_radii


def spd(seed, d):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(d, d))
    return m @ m.T + d * np.eye(d)


def test_laminate_factor_matches_fourth_and_square_roots():
    T = factor_S(np.diag([np.sqrt(3.0), 2.0]))
    np.testing.assert_allclose(T.S, np.diag([3 ** -0.25, 2 ** -0.5]), atol=1e-15)
    np.testing.assert_allclose(np.diag(T.S), [0.7598357, 0.7071068], atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_factor_is_upper_triangular_inverse_square_root(seed, d):
    A = spd(seed, d)
    T = factor_S(A)
    assert np.allclose(np.tril(T.S, -1), 0)
    assert np.all(np.diag(T.S) > 0)
    assert T.identity_defect() < 1e-12 * np.linalg.cond(A)
    np.testing.assert_allclose(T.S.T @ T.S, np.linalg.inv(A), rtol=1e-10, atol=1e-14)


def test_refactoring_is_idempotent():
    A = spd(3, 4)
    T1 = factor_S(A)
    T2 = factor_S(T1.matrix)
    np.testing.assert_array_equal(T1.S, T2.S)


def test_errors_name_the_problem():
    with pytest.raises(ValueError, match="leading minor 2"):
        factor_S(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError, match="symmetric"):
        factor_S(np.array([[2.0, 1.0], [0.0, 2.0]]))
    with pytest.raises(ValueError, match="square"):
        factor_S(np.ones((2, 3)))


def test_euclidean_norm_when_S_is_identity():
    E = Ellipsoid(factor_S(np.eye(2)), 1.0)
    assert ellipsoid_norm(E, [3.0, 4.0]) == pytest.approx(5.0)
    with pytest.raises(ValueError, match="dimension"):
        ellipsoid_norm(E, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        Ellipsoid(factor_S(np.eye(2)), 0.0)


def test_inclusion_radii_examples():
    assert inclusion_radii(Ellipsoid(factor_S(np.eye(2)), 2.0)) == pytest.approx((2.0, 2.0))
    E = Ellipsoid(factor_S(np.diag([0.25, 4.0])), 1.0)
    assert inclusion_radii(E) == pytest.approx((0.5, 2.0))


def test_laminate_semi_axes_inside_bracket(rng):
    E = Ellipsoid(factor_S(np.diag([np.sqrt(3.0), 2.0])), 1.0)
    np.testing.assert_allclose(np.sort(E.semi_axes()), [3 ** 0.25, np.sqrt(2)], rtol=1e-12)
    inner, outer = inclusion_radii(E)
    pts = rng.uniform(-2, 2, size=(20000, 2))
    r = np.linalg.norm(pts, axis=1)
    assert np.all(E.contains(pts[r < inner]))
    assert np.all(r[E.contains(pts)] < outer)


@settings(max_examples=30, deadline=None)
@given(arrays(float, (3, 2), elements=st.floats(-10, 10)), st.floats(0.1, 10))
def test_norm_is_homogeneous_and_subadditive(pts, lam):
    E = Ellipsoid(factor_S(spd(11, 2)), 1.0)
    x, y, _ = pts
    assert ellipsoid_norm(E, lam * x) == pytest.approx(lam * ellipsoid_norm(E, x), rel=1e-12, abs=1e-12)
    assert ellipsoid_norm(E, x + y) <= ellipsoid_norm(E, x) + ellipsoid_norm(E, y) + 1e-12


def test_ellipsoids_are_nested(rng):
    T = factor_S(spd(5, 3))
    pts = rng.normal(size=(5000, 3))
    small, big = Ellipsoid(T, 0.5, center=[0.1, 0, 0]), Ellipsoid(T, 0.8, center=[0.1, 0, 0])
    assert np.all(big.contains(pts[small.contains(pts)]))
