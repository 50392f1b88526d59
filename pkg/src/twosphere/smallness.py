"""Two-sphere one-cylinder bounds: sup norms, exponent, order selection and reports.

For a solution ``u`` and radii ``r1 < r2 < r3/12`` the quantities are

    delta = sup_{E_r1} |u(., t0)|,  L = sup_{E_r2} |u(., t0)|,
    N = sup over E_r3 x (t0 - r3^2, t0).

The bound under test is ``L <= C (delta^alpha N^(1-alpha)
+ (r3/r1) [(eps/r3) log(2 + r3/eps)]^alpha N)``; ``C_obs`` is the ratio of
``L`` to the bracket with ``C = 1``.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .chebinterp import M_MAX, build_system, extrapolate, residue_error_both
from .coeff_cell import CoefficientField, PotentialField, solve_potential_cell
from .geometry import Ellipsoid, HomogenizedTensor, factor_S
from .pdesolve import GridSolution, cylinder_sup, step_residual

__all__ = [
    "CASE1",
    "CASE2",
    "DEFAULT_CAP",
    "InequalityReport",
    "RepresentationRecord",
    "alpha",
    "bracket",
    "case1_order",
    "case2_order",
    "eps_log_factor",
    "representation_decompose",
    "select_m",
    "sup_slice",
    "bound_rhs",
    "verify_ball_bound",
    "verify_ellipsoid_bound",
    "verify_potential_bound",
]

CASE1 = "CASE1"
CASE2 = "CASE2"
DEFAULT_CAP = 100.0
_FLOOR = np.finfo(float).eps


def _check_radii(r1, r2, r3):
    if not (0 < r1 < r2 < r3 / 12):
        raise ValueError(f"radii must satisfy r1 < r2 < r3/12, got ({r1}, {r2}, {r3})")


def sup_slice(u: GridSolution, E: Ellipsoid, t0: float) -> float:
    """max |u(., t0)| over grid nodes inside E (each node stands for its cell)."""
    ext = E.r * np.sqrt(np.diag(E.tensor.matrix))
    if not u.contains_box(E.center - ext, E.center + ext, t0, t0):
        raise ValueError("ellipsoid is not inside the solved domain")
    mask = E.contains(u.points())
    if not mask.any():
        raise ValueError(f"no grid node inside E_{E.r:g}; the grid is too coarse for this radius")
    return float(np.max(np.abs(u.slice_at(t0)[mask])))


def alpha(r1: float, r2: float, r3: float) -> float:
    """log(r3/(4 r2)) / log(r3/(2 r1)), in (0, 1) for ordered radii."""
    _check_radii(r1, r2, r3)
    return math.log(r3 / (4 * r2)) / math.log(r3 / (2 * r1))


def eps_log_factor(eps: float, r3: float) -> float:
    """(eps/r3) log(2 + r3/eps), zero at eps = 0."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if eps == 0:
        return 0.0
    return eps / r3 * math.log(2 + r3 / eps)


def select_m(delta: float, N: float, eps: float, r1: float, r2: float, r3: float):
    """Return ``(case, m)`` for the extrapolation order.

    m0 = floor(log(N/delta)/log(r3/(2 r1))) + 1 is kept (CASE1) when the
    eps term is dominated at m0, that is
    eps_log_factor * (2 r2/r1)^m0 <= (4 r2/r3)^m0. Otherwise (CASE2)
    m1 = floor(log(eps_log_factor)/log(2 r1/r3)) + 1. ``delta = 0`` goes
    straight to CASE2; if eps is also 0, delta is replaced by the rounding
    floor eps_machine * N. The result is clipped to [1, 60].
    """
    _check_radii(r1, r2, r3)
    if N <= 0 or delta < 0:
        raise ValueError("need N > 0 and delta >= 0")
    if delta > N * (1 + 1e-12):
        raise ValueError(f"delta={delta} exceeds N={N}")
    e = eps_log_factor(eps, r3)
    if delta == 0 and e > 0:
        return CASE2, _clip(_m1(e, r1, r3))
    d_eff = max(delta, _FLOOR * N)
    m0 = math.floor(math.log(N / d_eff) / math.log(r3 / (2 * r1))) + 1
    if e == 0:
        return CASE1, _clip(m0)
    lhs = math.log(e) + m0 * math.log(2 * r2 / r1)
    rhs = m0 * math.log(4 * r2 / r3)
    if lhs <= rhs:
        return CASE1, _clip(m0)
    return CASE2, _clip(_m1(e, r1, r3))


def _m1(e, r1, r3):
    return math.floor(math.log(e) / math.log(2 * r1 / r3)) + 1


def case1_order(delta: float, N: float, r1: float, r3: float) -> int:
    """floor(log(N/delta)/log(r3/(2 r1))) + 1 (unclipped)."""
    if not 0 < delta <= N or not 0 < 2 * r1 < r3:
        raise ValueError("need 0 < delta <= N and 2 r1 < r3")
    return math.floor(math.log(N / delta) / math.log(r3 / (2 * r1))) + 1


def case2_order(eps: float, r1: float, r3: float) -> int:
    """floor(log(eps_log_factor)/log(2 r1/r3)) + 1 (unclipped)."""
    if not eps > 0 or not 0 < 2 * r1 < r3:
        raise ValueError("need eps > 0 and 2 r1 < r3")
    return _m1(eps_log_factor(eps, r3), r1, r3)


def _clip(m):
    return int(min(max(m, 1), M_MAX))


def bracket(delta, N, eps, r1, r2, r3, m) -> float:
    """(2r2/r1)^(m-1) delta + (4r2/r3)^m N + (2r2/r1)^m eps_log_factor N."""
    if m < 1:
        raise ValueError("m must be >= 1")
    g = 2 * r2 / r1
    return g ** (m - 1) * delta + (4 * r2 / r3) ** m * N + g**m * eps_log_factor(eps, r3) * N


def bound_rhs(delta, N, eps, r1, r2, r3, a=None) -> float:
    """delta^a N^(1-a) + (r3/r1) eps_log_factor^a N with a = alpha(r1, r2, r3)."""
    a = alpha(r1, r2, r3) if a is None else a
    e = eps_log_factor(eps, r3)
    second = 0.0 if e == 0 else (r3 / r1) * e**a * N
    return delta**a * N ** (1 - a) + second


@dataclass(frozen=True)
class InequalityReport:
    """One verification of the two-sphere one-cylinder bound.

    ``rhs`` is the bound with C = 1 and ``C_obs = L / rhs``; ``bracket`` is
    the three-term intermediate bound at the selected order ``m``.
    """

    kind: str
    eps: float
    r1: float
    r2: float
    r3: float
    t0: float
    delta: float
    L: float
    N: float
    alpha: float
    case: str
    m: int
    bracket: float
    rhs: float
    C_obs: float
    cap: float
    seed: int | None = None
    degenerate: bool = False
    warnings: tuple = ()
    extra: dict = field(default_factory=dict)

    @property
    def invariants_hold(self) -> bool:
        tol = 1e-12 * max(self.N, 1e-300)
        return bool(0 < self.alpha < 1 and self.delta <= self.L + tol and self.L <= self.N + tol)

    @property
    def passed(self) -> bool:
        return self.invariants_hold and self.C_obs <= self.cap and not self.extra.get("failed", False)

    def row(self) -> dict:
        return {"seed": "" if self.seed is None else self.seed, "eps": self.eps, "r1": self.r1,
                "r2": self.r2, "r3": self.r3, "t0": self.t0, "delta": self.delta, "L": self.L,
                "N": self.N, "alpha": self.alpha, "case": self.case, "m": self.m,
                "bracket": self.bracket, "rhs": self.rhs, "C_obs": self.C_obs,
                "warnings": ";".join(self.warnings)}


def _domain_R(u):
    return float(u.meta.get("R", 0.5 * u.h * (min(u.shape) - 1)))


def _assemble(kind, u, sets, radii, t0, a, cap, seed, extra=None):
    r1, r2, r3 = radii
    E1, E2, E3 = sets
    R = _domain_R(u)
    if not r3 / 12 < R / 8:
        raise ValueError(f"radii must satisfy r3/12 < R/8 with R={R}")
    ext = r3 * np.sqrt(np.diag(E3.tensor.matrix))
    if not u.contains_box(E3.center - ext, E3.center + ext, t0 - r3**2, t0):
        raise ValueError("cylinder E_r3 x (t0 - r3^2, t0) is not inside the solved domain")
    delta = sup_slice(u, E1, t0)
    L = sup_slice(u, E2, t0)
    N = cylinder_sup(u, E3, t0 - r3**2, t0)
    eps = float(u.eps)
    warnings = []
    degenerate = False
    if N == 0:
        raise ValueError("solution vanishes on the cylinder; the bound is trivial")
    if delta == 0:
        degenerate = True
        warnings.append("DEGENERATE: delta = 0, logs use the rounding floor")
    if eps > r3 / 4:
        warnings.append("eps > r3/4: the eps term dominates and the bound carries little information")
    case, m = select_m(delta, N, eps, r1, r2, r3)
    br = bracket(delta, N, eps, r1, r2, r3, m)
    rhs = bound_rhs(delta, N, eps, r1, r2, r3, a)
    # delta = eps = 0 makes the bound zero, so any nonzero L is an infinite violation
    c_obs = L / rhs if rhs > 0 else (0.0 if L == 0 else math.inf)
    return InequalityReport(kind, eps, r1, r2, r3, float(t0), delta, L, N, a, case, m, br, rhs,
                            c_obs, float(cap), seed if seed is not None else u.meta.get("seed"),
                            degenerate, tuple(warnings), dict(extra or {}))


def verify_ellipsoid_bound(u: GridSolution, tensor: HomogenizedTensor, radii, t0: float,
                       center=None, cap: float = DEFAULT_CAP, seed=None) -> InequalityReport:
    """Report for the ellipsoid form of the bound on ``u`` at time ``t0``.

    Needs r1 < r2 < r3/12 < R/8 with R the half-width of the solved box.
    """
    r1, r2, r3 = (float(r) for r in radii)
    _check_radii(r1, r2, r3)
    sets = [Ellipsoid(tensor, r, center) for r in (r1, r2, r3)]
    return _assemble("ellipsoid", u, sets, (r1, r2, r3), t0, alpha(r1, r2, r3), cap, seed)


def verify_ball_bound(u: GridSolution, tensor: HomogenizedTensor, radii, t0: float,
                         C1: float | None = None, ball_knob: float = 1.0, center=None,
                         cap: float = DEFAULT_CAP, seed=None) -> InequalityReport:
    """Report for the Euclidean-ball form.

    Sups are taken over balls B_r1, B_r2 and B_r3 x (t0 - r3^2, t0). The
    exponent is log(C1 r3/r2)/log(r3/(2 r1)) with ``C1`` defaulting to
    1/(4 sqrt(mu1)). The radius condition r2 < ball_knob * mu * r3/12 is
    enforced. Before the sups are taken the grid inclusions
    B_(sqrt(mu) r) within E_r within B_(sqrt(mu1) r) are checked on the
    nodes; the result is stored in ``extra``.
    """
    r1, r2, r3 = (float(r) for r in radii)
    _check_radii(r1, r2, r3)
    mu, mu1 = tensor.mu, tensor.mu1
    if not r2 < ball_knob * mu * r3 / 12:
        raise ValueError(f"ball radii need r2 < {ball_knob:g} * mu * r3/12 = {ball_knob * mu * r3 / 12:.6g}")
    C1 = 1.0 / (4.0 * math.sqrt(mu1)) if C1 is None else float(C1)
    a = math.log(C1 * r3 / r2) / math.log(r3 / (2 * r1))
    unit = factor_S(np.eye(tensor.d))
    balls = [Ellipsoid(unit, r, center) for r in (r1, r2, r3)]
    pts = u.points()
    inclusions = True
    for r in (r1, r2, r3):
        inner = Ellipsoid(unit, math.sqrt(mu) * r, center).contains(pts)
        ell = Ellipsoid(tensor, r, center).contains(pts)
        outer = Ellipsoid(unit, math.sqrt(mu1) * r, center).contains(pts)
        inclusions &= bool(np.all(ell[inner]) and np.all(outer[ell]))
    extra = {"C1": C1, "ball_knob": ball_knob, "inclusions_ok": inclusions,
             "failed": not inclusions}
    return _assemble("ball", u, balls, (r1, r2, r3), t0, a, cap, seed, extra)


def verify_potential_bound(u: GridSolution, field: CoefficientField, tensor: HomogenizedTensor,
                       radii, t0: float, potential: PotentialField | None = None,
                       M: float | None = None, center=None, cap: float = DEFAULT_CAP,
                       seed=None, residual_tol: float = 1e-6) -> InequalityReport:
    """Report for a solution of the equation with potential.

    The gauge ``v = exp(M t) u`` with ``M`` the cell mean of the potential
    removes the mean of the zeroth-order term; the bound is checked on
    ``v``. The last one-step residual of
    ``v_t - div(A grad v) - (M - V(x/eps)) v`` before ``t0`` is stored in
    ``extra`` and must be below ``residual_tol``.
    """
    r1, r2, r3 = (float(r) for r in radii)
    _check_radii(r1, r2, r3)
    if u.eps > r3:
        raise ValueError(f"eps={u.eps} exceeds r3={r3}")
    potential = u.potential if potential is None else potential
    if M is None:
        M = 0.0 if potential is None else solve_potential_cell(potential, resolution=(256,) * u.d).mean_V
    gauge = np.exp(M * u.times).reshape((-1,) + (1,) * u.d)
    v = replace(u, values=u.values * gauge, meta=dict(u.meta))
    n = u.time_index(t0)
    if n == 0:
        raise ValueError("t0 must follow at least one saved step")
    shift = None
    if potential is not None:
        shift = potential(u.points() / u.eps) - M
    res = step_residual(field, v, n, shift=shift)
    rep = verify_ellipsoid_bound(v, tensor, (r1, r2, r3), t0, center, cap, seed)
    extra = {"M": float(M), "gauge_residual": res, "failed": not res <= residual_tol}
    return replace(rep, kind="potential", extra=extra)


@dataclass(frozen=True)
class RepresentationRecord:
    """Extrapolation identity at one point.

    ``residual`` is |u(x0, t0) - sum_i c_i u(x_i, t0)|. For analytic input it
    is the contour value and ``residual_direct`` the cross-check; for grid
    input only the direct value exists. ``envelope`` is
    bracket(delta, N, eps, radii, m) when delta and N are known.
    """

    m: int
    x0: tuple
    t0: float
    target: float
    extrapolant: float
    residual: float
    residual_direct: float
    residual_contour: float | None
    kernel: str
    envelope: float | None = None


def representation_decompose(u, x0, t0: float, radii, m: int, tensor: HomogenizedTensor | None = None,
                             delta: float | None = None, N: float | None = None, eps: float = 0.0,
                             n_quad: int = 1024) -> RepresentationRecord:
    """Compare u(x0, t0) with its Chebyshev extrapolation from the inner segment.

    ``u`` is a :class:`GridSolution` (nodes x_i = h_i x0 r1/r2 are
    interpolated multilinearly) or a callable ``u(x, t)`` analytic in x,
    used with the explicit kernel. ``x0`` must lie in E_r2 (the Euclidean
    ball when ``tensor`` is omitted).
    """
    r1, r2, r3 = (float(r) for r in radii)
    sys = build_system(r1, r2, r3, m)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d = x0.size
    tensor = factor_S(np.eye(d)) if tensor is None else tensor
    if not Ellipsoid(tensor, r2).contains(x0):
        raise ValueError("x0 must lie in E_r2")
    unit_dir = x0 * (r1 / r2)
    if isinstance(u, GridSolution):
        pts = np.vstack([sys.segment_points(x0), x0[None, :]])
        top = u.origin + u.h * (np.asarray(u.shape) - 1)
        if np.any(pts < u.origin - 1e-12) or np.any(pts > top + 1e-12):
            raise ValueError("extrapolation nodes leave the solved domain")
        eps = u.eps
        vals = u.interpolate(pts[:-1], t0)
        target = float(u.interpolate(x0[None, :], t0)[0])
        extrap = float(extrapolate(sys, vals))
        direct = target - extrap
        contour, kernel, primary = None, "numeric", direct
    elif callable(u):
        def f(z):
            z = np.asarray(z)
            return u(z[..., None] * unit_dir, t0)

        direct, contour, _ = residue_error_both(sys, f, n_quad=n_quad)
        target = float(np.real(f(np.array([r2 / r1]))[0]))
        extrap = float(np.real(extrapolate(sys, f(sys.nodes))))
        direct, contour = float(np.real(direct)), float(np.real(contour))
        kernel, primary = "explicit", contour
    else:
        raise TypeError("u must be a GridSolution or a callable u(x, t)")
    envelope = None
    if delta is not None and N is not None:
        envelope = bracket(delta, N, eps, r1, r2, r3, m)
    return RepresentationRecord(m, tuple(x0), float(t0), target, extrap, abs(primary), abs(direct),
                                None if contour is None else abs(contour), kernel, envelope)
