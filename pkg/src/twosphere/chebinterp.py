"""Chebyshev-node extrapolation from a short segment to an outer point.

Values sampled at the Chebyshev nodes ``h_i = cos((2i-1)pi/(2m))`` of
``[-1, 1]`` are extrapolated to ``p = r2/r1 > 1`` with the Lagrange weights

    c_i = prod_{j != i} (p - h_j) / (h_i - h_j).

The interpolation remainder ``(R_m f)(p) = f(p) - sum_i c_i f(h_i)`` can be
computed directly or by the contour integral

    (R_m f)(p) = 1/(2 pi i) oint Phi_m(p) f(z) / ((z - p) Phi_m(z)) dz

over ``|z| = r3/(3 r1)``, where ``Phi_m`` is the monic nodal polynomial.
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

__all__ = [
    "ChebyshevSystem",
    "NumericalConsistencyError",
    "build_system",
    "chebyshev_nodes",
    "extrapolate",
    "lagrange_weights",
    "extrapolation_envelopes",
    "nodal_derivative",
    "nodal_polynomial",
    "residue_error",
    "residue_error_both",
]

M_MAX = 60


class NumericalConsistencyError(ArithmeticError):
    """Two independent evaluations of the same quantity disagree."""


def chebyshev_nodes(m: int) -> np.ndarray:
    """Roots of T_m, strictly decreasing in i = 1..m."""
    i = np.arange(1, m + 1)
    return np.cos((2 * i - 1) * np.pi / (2 * m))


def nodal_polynomial(nodes, z):
    """Phi_m(z) = prod_j (z - h_j) for scalar or array ``z`` (real or complex)."""
    z = np.asarray(z)
    out = np.ones_like(z, dtype=np.result_type(z, float))
    for h in nodes:
        out = out * (z - h)
    return out


def nodal_derivative(m: int) -> np.ndarray:
    """Phi_m'(h_i) in closed form: m 2^(1-m) (-1)^(i-1) / sin((2i-1)pi/(2m))."""
    i = np.arange(1, m + 1)
    theta = (2 * i - 1) * np.pi / (2 * m)
    sign = np.where(i % 2 == 1, 1.0, -1.0)
    return m * 2.0 ** (1 - m) * sign / np.sin(theta)


def lagrange_weights(nodes, target: float) -> np.ndarray:
    """Weights c_i with sum_i c_i f(h_i) equal to the interpolant at ``target``.

    The products are formed in exact rational arithmetic on the float64
    inputs, so each weight is the correctly rounded value for the given
    nodes and target.
    """
    nodes = np.asarray(nodes, dtype=float)
    h = [Fraction(float(x)) for x in nodes]
    p = Fraction(float(target))
    w = np.empty(len(h))
    for i, hi in enumerate(h):
        num, den = Fraction(1), Fraction(1)
        for j, hj in enumerate(h):
            if j != i:
                num *= p - hj
                den *= hi - hj
        w[i] = float(num / den)
    return w


@dataclass(frozen=True)
class ChebyshevSystem:
    """Nodes, weights and bound data for one extrapolation order ``m``."""

    m: int
    r1: float
    r2: float
    r3: float
    nodes: np.ndarray
    weights: np.ndarray
    nodal_derivatives: np.ndarray

    @property
    def target(self) -> float:
        return self.r2 / self.r1

    @property
    def contour_radius(self) -> float:
        return self.r3 / (3.0 * self.r1)

    @property
    def weight_bound(self) -> float:
        """(1/m) (2 r2/r1)^(m-1)."""
        return (2.0 * self.target) ** (self.m - 1) / self.m

    @property
    def derivative_floor(self) -> float:
        """m 2^(1-m), the lower bound on |Phi_m'(h_i)|."""
        return self.m * 2.0 ** (1 - self.m)

    def weight_bound_holds(self) -> bool:
        return bool(np.all(np.abs(self.weights) <= self.weight_bound))

    def derivative_bound_holds(self) -> bool:
        return bool(np.all(np.abs(self.nodal_derivatives) >= self.derivative_floor))

    def moment_errors(self) -> np.ndarray:
        """|sum_i c_i h_i^k - p^k| / p^k for k < m, in exact arithmetic.

        The stored float64 nodes, weights and target are converted to exact
        rationals, so the result measures the accuracy of the weights alone
        and not the rounding of the check itself.
        """
        c = [Fraction(float(w)) for w in self.weights]
        h = [Fraction(float(x)) for x in self.nodes]
        p = Fraction(self.target)
        out = []
        powers = [Fraction(1)] * self.m
        for k in range(self.m):
            exact = p**k
            out.append(float(abs(sum(ci * hk for ci, hk in zip(c, powers)) - exact) / exact))
            powers = [hk * hi for hk, hi in zip(powers, h)]
        return np.array(out)

    def segment_points(self, x0) -> np.ndarray:
        """x_i = h_i x0 r1/r2, shape (m, d)."""
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        return np.outer(self.nodes, x0) * (self.r1 / self.r2)


def _check_radii(r1, r2, r3):
    if not (0 < r1 < r2 < r3 / 12):
        raise ValueError(f"radii must satisfy 0 < r1 < r2 < r3/12, got ({r1}, {r2}, {r3})")


def build_system(r1: float, r2: float, r3: float, m: int) -> ChebyshevSystem:
    """Assemble the order-``m`` system for radii ``r1 < r2 < r3/12``."""
    _check_radii(r1, r2, r3)
    if not (1 <= int(m) <= M_MAX) or int(m) != m:
        raise ValueError(f"m must be an integer in [1, {M_MAX}], got {m}")
    m = int(m)
    nodes = chebyshev_nodes(m)
    weights = lagrange_weights(nodes, r2 / r1)
    for a in (nodes, weights):
        a.setflags(write=False)
    deriv = nodal_derivative(m)
    deriv.setflags(write=False)
    return ChebyshevSystem(m, float(r1), float(r2), float(r3), nodes, weights, deriv)


def extrapolate(sys: ChebyshevSystem, samples) -> float:
    """sum_i c_i f(h_i). ``samples`` may carry trailing axes (vector-valued f)."""
    samples = np.asarray(samples)
    if samples.shape[0] != sys.m:
        raise ValueError(f"expected {sys.m} samples, got {samples.shape[0]}")
    return np.tensordot(sys.weights, samples, axes=(0, 0))


def _contour_remainder(sys, f, n_quad, radius):
    theta = 2 * np.pi * np.arange(n_quad) / n_quad
    z = radius * np.exp(1j * theta)
    p = sys.target
    phi_p = nodal_polynomial(sys.nodes, p)
    fz = np.asarray(f(z))
    # dz/(2 pi i) = z dtheta/(2 pi); trapezoid on a periodic integrand
    kernel = phi_p * z / ((z - p) * nodal_polynomial(sys.nodes, z))
    kernel = kernel.reshape(kernel.shape + (1,) * (fz.ndim - 1))
    terms = kernel * fz
    val = np.mean(terms, axis=0)
    # drop the imaginary part only when it is at the rounding level of the sum
    floor = 64 * np.finfo(float).eps * np.mean(np.abs(terms), axis=0)
    if np.all(np.abs(np.imag(val)) <= floor):
        return np.real(val)
    return val


def residue_error_both(sys: ChebyshevSystem, f: Callable, n_quad: int = 512,
                       radius: float | None = None):
    """Return ``(direct, contour, scale)`` estimates of (R_m f)(p).

    ``scale`` is |f(p)| + sum_i |c_i f(h_i)|, the size of the terms whose
    difference gives the direct value; its rounding floor is eps * scale.
    """
    if n_quad < 512:
        raise ValueError("at least 512 contour nodes are required")
    radius = sys.contour_radius if radius is None else radius
    fp = np.asarray(f(np.array([sys.target])))[0]
    fh = np.asarray(f(sys.nodes))
    direct = fp - extrapolate(sys, fh)
    contour = _contour_remainder(sys, f, n_quad, radius)
    scale = np.abs(fp) + np.tensordot(np.abs(sys.weights), np.abs(fh), axes=(0, 0))
    return direct, contour, scale


def residue_error(sys: ChebyshevSystem, f: Callable, n_quad: int = 512,
                  rtol: float = 1e-6):
    """Interpolation remainder f(p) - sum c_i f(h_i), cross-checked by contour.

    ``f`` must accept complex arrays and be analytic on the closed disc of
    radius r3/(3 r1). The direct value is returned; a
    :class:`NumericalConsistencyError` is raised when the contour quadrature
    disagrees by more than ``rtol`` relative to the larger of the two values
    and by more than the rounding floor of the direct difference.
    """
    direct, contour, scale = residue_error_both(sys, f, n_quad)
    floor = 64 * np.finfo(float).eps * np.max(scale)
    denom = max(np.max(np.abs(direct)), np.max(np.abs(contour)))
    diff = np.max(np.abs(direct - contour))
    if diff > max(rtol * denom, floor):
        raise NumericalConsistencyError(
            f"contour and direct remainders disagree: |diff|={diff:.3e}, scale={denom:.3e}"
        )
    return direct


def extrapolation_envelopes(sys: ChebyshevSystem, dt: float, d: int, c_tilde: float = 1.0,
                   c_exp: float = 0.125):
    """Envelope for |R_m Gamma_0| and |R_m grad_y Gamma_0|.

    Returns ``(C~ 4^m r2^m r3^-m dt^(-d/2) e^(-C r3^2/dt),
    C~ 4^m r2^m r3^-(m-1) dt^(-d/2-1) e^(-C r3^2/dt))``. The constants are
    not known explicitly; only ratios of these numbers are meaningful.
    """
    if dt <= 0:
        raise ValueError("t - s must be positive")
    m, r2, r3 = sys.m, sys.r2, sys.r3
    geo = (4.0 * r2 / r3) ** m
    decay = np.exp(-c_exp * r3**2 / dt)
    kern = c_tilde * geo * dt ** (-d / 2) * decay
    grad = c_tilde * geo * r3 * dt ** (-d / 2 - 1) * decay
    return kern, grad
