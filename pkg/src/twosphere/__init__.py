"""Periodic homogenization, Chebyshev extrapolation and propagation-of-smallness checks.

Modules
-------
coeff_cell
    Coefficient fields, cell problems and the homogenized tensor.
geometry
    The factor S with S A S^T = I and the ellipsoids E_r.
kernels
    The explicit homogenized heat kernel and numerical oscillating kernels.
chebinterp
    Chebyshev-node extrapolation and its interpolation remainder.
pdesolve
    Finite-difference parabolic solver, ensembles and energy checks.
smallness
    Sup norms, order selection and two-sphere one-cylinder reports.
cli
    Experiment harness behind the ``twosphere`` command.
"""

__version__ = "0.1.0"

from .chebinterp import build_system, extrapolate, residue_error
from .coeff_cell import builtin_field, builtin_potential, homogenize, solve_corrector
from .geometry import Ellipsoid, factor_S
from .kernels import gamma0, grad_gamma0
from .pdesolve import Cylinder, generate_ensemble, solve_cylinder
from .smallness import verify_ball_bound, verify_ellipsoid_bound, verify_potential_bound

__all__ = [
    "Cylinder",
    "Ellipsoid",
    "build_system",
    "builtin_field",
    "builtin_potential",
    "extrapolate",
    "factor_S",
    "gamma0",
    "generate_ensemble",
    "grad_gamma0",
    "homogenize",
    "residue_error",
    "solve_corrector",
    "solve_cylinder",
    "verify_ball_bound",
    "verify_ellipsoid_bound",
    "verify_potential_bound",
]
