"""Implicit finite differences for u_t = div(A(x/eps, t/eps^2) grad u) - V(x/eps) u.

The spatial operator is the flux form of :mod:`twosphere._stencil` with the
coefficient sampled at cell faces; time stepping is backward Euler with
Dirichlet data on the lateral boundary. A potential is handled through the
gauge ``v = exp(M t) u`` with ``M`` the cell mean of ``V``: the scheme steps
``v_t = div(A grad v) + (M - V) v`` and stores ``u = exp(-M t) v``.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import linalg
from scipy.sparse.linalg import cg, splu

from ._stencil import Stencil
from .coeff_cell import CoefficientField, PotentialField
from .geometry import Ellipsoid, HomogenizedTensor

log = logging.getLogger(__name__)

__all__ = [
    "CaccioppoliReport",
    "Cylinder",
    "GridSolution",
    "caccioppoli_check",
    "cylinder_sup",
    "default_steps",
    "generate_ensemble",
    "solve_cylinder",
    "step_residual",
]

H_PER_EPS = 16
K_PER_EPS2 = 32


@dataclass(frozen=True)
class Cylinder:
    """Box [c - R, c + R]^d times (t_start, t_end)."""

    R: float
    t_start: float
    t_end: float
    d: int = 1
    center: tuple = None

    def __post_init__(self):
        if self.R <= 0 or self.t_end <= self.t_start:
            raise ValueError("cylinder needs R > 0 and t_end > t_start")
        c = (0.0,) * self.d if self.center is None else tuple(float(v) for v in self.center)
        object.__setattr__(self, "center", c)


@dataclass(frozen=True)
class GridSolution:
    """Space-time samples on a uniform node grid.

    ``values[n]`` is the solution at ``times[n]`` on the nodes
    ``origin + i*h``. Only the saved time levels are kept.
    """

    d: int
    eps: float
    origin: np.ndarray
    h: float
    shape: tuple
    times: np.ndarray
    k: float
    values: np.ndarray
    boundary: str = "dirichlet"
    potential_mean: float = 0.0
    potential: object = None
    field_name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("solution contains NaN or Inf")

    def axes(self):
        return [self.origin[a] + self.h * np.arange(n) for a, n in enumerate(self.shape)]

    def points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def time_index(self, t0: float) -> int:
        i = int(np.argmin(np.abs(self.times - t0)))
        if abs(self.times[i] - t0) > 1e-9 * max(1.0, abs(t0)) + 1e-12:
            raise ValueError(f"t0={t0} is not a saved time level")
        return i

    def slice_at(self, t0: float) -> np.ndarray:
        return self.values[self.time_index(t0)]

    def interpolate(self, x, t0: float) -> np.ndarray:
        """Multilinear interpolation of the ``t0`` slice at points ``(..., d)``."""
        from scipy.interpolate import RegularGridInterpolator

        x = np.asarray(x, dtype=float)
        interp = RegularGridInterpolator(self.axes(), self.slice_at(t0), method="linear",
                                         bounds_error=True)
        return interp(x.reshape(-1, self.d)).reshape(x.shape[:-1])

    def scaled(self, lam: float) -> "GridSolution":
        return GridSolution(self.d, self.eps, self.origin, self.h, self.shape, self.times, self.k,
                            lam * self.values, self.boundary, self.potential_mean, self.potential,
                            self.field_name, dict(self.meta))

    def contains_box(self, lo, hi, t_lo, t_hi) -> bool:
        top = self.origin + self.h * (np.asarray(self.shape) - 1)
        tt = 1e-9 * max(1.0, abs(t_lo), abs(t_hi))
        return bool(np.all(np.asarray(lo) >= self.origin - 1e-12) and np.all(np.asarray(hi) <= top + 1e-12)
                    and t_lo >= self.times[0] - tt and t_hi <= self.times[-1] + tt)


def default_steps(field: CoefficientField, eps: float, h=None, k=None):
    """Largest steps satisfying h <= eps/16 and k <= eps^2/32 (unless constant)."""
    if field.constant or eps == 0:
        return (0.02 if h is None else h), (1e-3 if k is None else k)
    return (eps / H_PER_EPS if h is None else h), (eps**2 / K_PER_EPS2 if k is None else k)


def _check_resolution(field, eps, h, k):
    if field.constant or eps == 0:
        return
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if h > eps / H_PER_EPS * (1 + 1e-9):
        raise ValueError(f"spatial step {h:.3g} does not resolve eps={eps}: need h <= eps/{H_PER_EPS}")
    if k > eps**2 / K_PER_EPS2 * (1 + 1e-9):
        raise ValueError(f"time step {k:.3g} does not resolve eps={eps}: need k <= eps^2/{K_PER_EPS2}")


def _face_values(field, eps, st, origin, t):
    """a_kl on k-faces evaluated at (x/eps, t/eps^2)."""
    out = []
    for k in range(st.d):
        pts = st.face_points(origin, k)
        if field.constant or eps == 0:
            a = field(pts[..., :] * 0.0, 0.0)
        else:
            a = field(pts / eps, t / eps**2)
        out.append([a[..., k, l] for l in range(st.d)])
    return out


class _Stepper:
    """Backward Euler on the interior nodes of a box."""

    def __init__(self, field, eps, origin, h, shape, k, pot):
        self.field, self.eps, self.k = field, eps, k
        self.origin, self.h, self.shape = origin, h, shape
        self.d = len(shape)
        self.st = Stencil(shape, h, periodic=False)
        inner = np.zeros(shape, dtype=bool)
        inner[tuple(slice(1, n - 1) for n in shape)] = True
        self.inner = inner.ravel()
        self.pot = pot  # node values of V(x/eps) - M, or None
        self._fixed = None
        self.time_dependent = field.time_dependent and not field.constant and eps > 0

    def _matrix(self, t):
        coef = _face_values(self.field, self.eps, self.st, self.origin, t)
        L = self.st.operator(coef)
        if self.pot is not None:
            L = L + sp.diags(self.pot)
        return L

    def _system(self, t):
        if self._fixed is not None:
            return self._fixed
        L = self._matrix(t)
        Lii = L[self.inner][:, self.inner]
        Lib = L[self.inner][:, ~self.inner]
        A = (sp.identity(Lii.shape[0], format="csc") / self.k + Lii).tocsc()
        if self.d == 1:
            n = A.shape[0]
            ab = np.zeros((3, n))
            ab[0, 1:] = A.diagonal(1)
            ab[1] = A.diagonal()
            ab[2, :-1] = A.diagonal(-1)
            sysm = ("banded", ab, Lib)
        elif self.time_dependent:
            sysm = ("cg", A, Lib)
        else:
            sysm = ("lu", splu(A), Lib)
        if not self.time_dependent:
            self._fixed = sysm
        return sysm

    def step(self, u_prev, t_new, boundary_new):
        kind, A, Lib = self._system(t_new)
        ub = boundary_new[~self.inner]
        rhs = u_prev[self.inner] / self.k - Lib @ ub
        if kind == "banded":
            x = linalg.solve_banded((1, 1), A, rhs, check_finite=False)
        elif kind == "lu":
            x = A.solve(rhs)
        else:
            dinv = 1.0 / A.diagonal()
            M = sp.diags(dinv)
            x, info = cg(A, rhs, x0=u_prev[self.inner], rtol=1e-13, atol=0.0, M=M, maxiter=2000)
            if info != 0:
                raise RuntimeError(f"linear solve failed at t={t_new:.6g} (cg info {info})")
        out = boundary_new.copy()
        out[self.inner] = x
        return out


def solve_cylinder(field: CoefficientField, eps: float, domain: Cylinder, initial, boundary,
                   h=None, k=None, potential: PotentialField | None = None,
                   save_every: int | None = None, save_times=(), check_resolution=True,
                   corner_tol=1e-6) -> GridSolution:
    """Solve on ``domain`` with initial data ``initial(x)`` and lateral data ``boundary(x, t)``.

    ``initial`` and ``boundary`` take node coordinates of shape ``(..., d)``.
    Steps default to h = eps/16, k = eps^2/32; the time step is shrunk so it
    divides the interval. Levels are stored every ``save_every`` steps, at
    every ``save_times`` entry (snapped to the step grid) and at both ends.
    """
    d = domain.d
    if field.d != d:
        raise ValueError(f"field dimension {field.d} does not match domain dimension {d}")
    if d > 2:
        raise ValueError("only d = 1 and d = 2 are supported")
    h, k = default_steps(field, eps, h, k)
    n = int(np.ceil(2 * domain.R / h - 1e-9)) + 1
    h = 2 * domain.R / (n - 1)
    span = domain.t_end - domain.t_start
    n_steps = int(np.ceil(span / k - 1e-9))
    k = span / n_steps
    if check_resolution:
        _check_resolution(field, eps, h, k)
    shape = (n,) * d
    origin = np.asarray(domain.center, dtype=float) - domain.R
    st_pts = Stencil(shape, h, periodic=False).node_points(origin)
    flat_pts = st_pts.reshape(-1, d)
    M = 0.0
    pot = None
    if potential is not None:
        if eps <= 0:
            raise ValueError("a potential needs eps > 0")
        from .coeff_cell import solve_potential_cell

        M = solve_potential_cell(potential, resolution=(256,) * d).mean_V
        pot = potential(flat_pts / eps) - M
    stepper = _Stepper(field, eps, origin, h, shape, k, pot)

    u0 = np.asarray(initial(st_pts), dtype=float).reshape(-1)
    g0 = np.asarray(boundary(st_pts, domain.t_start), dtype=float).reshape(-1)
    bmask = ~stepper.inner
    scale = max(1.0, float(np.max(np.abs(u0))))
    if np.max(np.abs(u0[bmask] - g0[bmask])) > corner_tol * scale:
        raise ValueError("initial data does not match boundary data on the parabolic corner")
    u0 = u0.copy()
    u0[bmask] = g0[bmask]

    # the last two steps are always kept for one-step residual checks
    save_idx = {0, n_steps - 1, n_steps}
    if save_every:
        save_idx.update(range(0, n_steps + 1, int(save_every)))
    for ts in save_times:
        j = int(round((ts - domain.t_start) / k))
        if not 0 <= j <= n_steps or abs(domain.t_start + j * k - ts) > 1e-9 * max(1, abs(ts)) + 1e-12:
            raise ValueError(f"save time {ts} is not on the step grid")
        save_idx.add(j)
    times, vals = [], []
    v = u0 * np.exp(M * domain.t_start) if M else u0
    if 0 in save_idx:
        times.append(domain.t_start)
        vals.append(u0.reshape(shape))
    for step in range(1, n_steps + 1):
        t = domain.t_start + step * k
        g = np.asarray(boundary(st_pts, t), dtype=float).reshape(-1)
        if M:
            g = g * np.exp(M * t)
        try:
            v = stepper.step(v, t, g)
        except (RuntimeError, ValueError, linalg.LinAlgError) as exc:
            raise RuntimeError(f"linear solve failed at step {step}: {exc}") from exc
        if step in save_idx:
            times.append(t)
            vals.append((v * np.exp(-M * t) if M else v).reshape(shape).copy())
    meta = {"n_steps": n_steps, "R": domain.R, "t_start": domain.t_start, "t_end": domain.t_end,
            "center": domain.center}
    return GridSolution(d, float(eps), origin, h, shape, np.asarray(times), k, np.stack(vals),
                        "dirichlet", M, potential, field.name, meta)


def step_residual(field: CoefficientField, u: GridSolution, n: int, values=None, shift=None) -> float:
    """Relative residual of one backward Euler step between levels n-1 and n.

    Evaluates (w^n - w^(n-1))/k - div(A grad w^n) + q w^n on interior nodes
    with ``w = values`` (default ``u.values``) and ``q`` the nodal array
    ``shift`` (default zero), scaled by k / max|w^n|. The two levels must be
    one step apart.
    """
    if not 1 <= n < len(u.times):
        raise ValueError("level index out of range")
    if abs(u.times[n] - u.times[n - 1] - u.k) > 1e-9 * u.k:
        raise ValueError("levels n-1 and n are not consecutive steps")
    w = u.values if values is None else np.asarray(values)
    st = Stencil(u.shape, u.h, periodic=False)
    L = st.operator(_face_values(field, u.eps, st, u.origin, u.times[n]))
    wn, wp = w[n].ravel(), w[n - 1].ravel()
    r = (wn - wp) / u.k + L @ wn
    if shift is not None:
        r = r + np.asarray(shift).ravel() * wn
    inner = np.zeros(u.shape, dtype=bool)
    inner[tuple(slice(1, m - 1) for m in u.shape)] = True
    scale = max(float(np.max(np.abs(wn))), 1e-300)
    return float(np.max(np.abs(r[inner.ravel()]))) * u.k / scale


# ---------------------------------------------------------------- ensembles

def _fourier_data(rng, d, R, T, modes=(4, 3)):
    p_max, q_max = modes
    terms = []
    for p in range(p_max):
        for q in range(q_max):
            direction = rng.integers(-1, 2, size=d) if d > 1 else np.ones(1, dtype=int)
            if p and not np.any(direction):
                direction[0] = 1
            terms.append((rng.normal() / (1 + p + q), p * direction, q,
                          rng.uniform(0, 2 * np.pi), rng.uniform(0, 2 * np.pi)))

    def g(x, t):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for c, pd, q, phi, theta in terms:
            out = out + c * np.cos(np.pi * (x @ pd) / R + phi) * np.cos(np.pi * q * t / T + theta)
        return out

    return g


def _late_switch(rng, d, R, t_end, width):
    sign = rng.choice([-1.0, 1.0], size=2)
    osc = rng.uniform(0.5, 1.0)
    width = width * rng.uniform(0.8, 1.25)
    t_on = t_end - width

    def ramp(t):
        s = np.clip((t - t_on) / width, 0.0, 1.0)
        return s * s * (3 - 2 * s)

    def g(x, t):
        x = np.asarray(x, dtype=float)
        side = np.where(x[..., 0] >= 0, sign[0], sign[1])
        wave = 1.0 if d == 1 else np.cos(np.pi * osc * x[..., 1] / R)
        return side * wave * ramp(t)

    return g


def _parabolic_sup(g, pts, inner, t_grid):
    sup = float(np.max(np.abs(g(pts, t_grid[0]))))
    lateral = pts.reshape(-1, pts.shape[-1])[~inner]
    for t in t_grid:
        sup = max(sup, float(np.max(np.abs(g(lateral, t)))))
    return sup


def generate_ensemble(field: CoefficientField, eps: float, domain: Cylinder, count: int,
                      seed: int, h=None, k=None, potential=None, save_every=None,
                      save_times=(), designed_every: int = 4, jobs: int = 1):
    """Seeded family of solutions on ``domain``.

    Member ``i`` draws its data from ``SeedSequence(seed).spawn(count)[i]``.
    Generic members use low-order Fourier sums in (x, t) as initial and
    lateral data. Every ``designed_every``-th member (indices 3, 7, ...) has
    zero initial data and lateral data switched on only shortly before
    ``domain.t_end``, so the final slice is tiny near the centre. Data are
    normalised to unit sup on the parabolic boundary.
    """
    if count < 1:
        raise ValueError("ensemble count must be >= 1")
    d = domain.d
    h_, k_ = default_steps(field, eps, h, k)
    n = int(np.ceil(2 * domain.R / h_ - 1e-9)) + 1
    hh = 2 * domain.R / (n - 1)
    span = domain.t_end - domain.t_start
    n_steps = int(np.ceil(span / k_ - 1e-9))
    t_grid = domain.t_start + span * np.arange(n_steps + 1) / n_steps
    origin = np.asarray(domain.center) - domain.R
    pts = Stencil((n,) * d, hh, periodic=False).node_points(origin)
    inner = np.zeros((n,) * d, dtype=bool)
    inner[tuple(slice(1, n - 1) for _ in range(d))] = True
    inner = inner.ravel()
    if save_every is None:
        save_every = max(1, n_steps // 400)
    # diffusion from the lateral boundary reaches the centre at relative size about exp(-6)
    a_max = 1.0 / field.mu
    width = domain.R**2 / (24 * a_max)
    children = np.random.SeedSequence(seed).spawn(count)

    def member(i):
        rng = np.random.default_rng(children[i])
        designed = designed_every and (i % designed_every == designed_every - 1)
        if designed:
            g = _late_switch(rng, d, domain.R, domain.t_end, width)
        else:
            g = _fourier_data(rng, d, domain.R, max(abs(domain.t_start), abs(domain.t_end)))
        sup = _parabolic_sup(g, pts, inner, t_grid)

        def bnd(x, t):
            return g(x, t) / sup

        sol = solve_cylinder(field, eps, domain, lambda x: bnd(x, domain.t_start), bnd, h=h_, k=k_,
                             potential=potential, save_every=save_every, save_times=save_times)
        sol.meta.update({"seed": int(seed), "member": i, "designed": bool(designed)})
        return sol

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            return list(ex.map(member, range(count)))
    return [member(i) for i in range(count)]


# ---------------------------------------------------------------- energy

@dataclass(frozen=True)
class CaccioppoliReport:
    r3: float
    t0: float
    energy: float
    sup: float
    C_obs: float


def _time_window(u, t_lo, t_hi):
    tt = 1e-9 * max(1.0, abs(t_lo), abs(t_hi))
    return np.nonzero((u.times >= t_lo - tt) & (u.times <= t_hi + tt))[0]


def cylinder_sup(u: GridSolution, E: Ellipsoid, t_lo: float, t_hi: float) -> float:
    """max |u| over nodes inside E and saved levels in [t_lo, t_hi]."""
    idx = _time_window(u, t_lo, t_hi)
    if idx.size == 0:
        raise ValueError("no saved time level in the cylinder")
    mask = E.contains(u.points())
    if not mask.any():
        raise ValueError("no grid node inside the ellipsoid; refine the grid")
    return float(np.max(np.abs(u.values[idx][:, mask])))


def _segment_energy_1d(x, g, a, b):
    """Exact integral of the squared piecewise-linear interpolant of g over [a, b]."""
    if b <= a:
        return 0.0
    total = 0.0
    i0 = max(int(np.searchsorted(x, a, side="right")) - 1, 0)
    i1 = min(int(np.searchsorted(x, b, side="left")), len(x) - 1)
    for i in range(i0, i1):
        xl, xr = max(x[i], a), min(x[i + 1], b)
        if xr <= xl:
            continue
        w = x[i + 1] - x[i]
        gl = g[i] + (g[i + 1] - g[i]) * (xl - x[i]) / w
        gr = g[i] + (g[i + 1] - g[i]) * (xr - x[i]) / w
        total += (xr - xl) * (gl * gl + gl * gr + gr * gr) / 3.0
    return total


def _annulus_energy(u, values, tensor, r_in, r_out, center):
    if u.d == 1:
        x = u.axes()[0]
        g = np.gradient(values, u.h)
        s = float(tensor.S[0, 0])
        c = float(center[0])
        a, b = r_in / s, r_out / s
        return _segment_energy_1d(x, g, c + a, c + b) + _segment_energy_1d(x, g, c - b, c - a)
    grads = np.gradient(values, u.h)
    dens = sum(gk * gk for gk in grads)
    E_in = Ellipsoid(tensor, r_in, center)
    E_out = Ellipsoid(tensor, r_out, center)
    pts = u.points()
    mask = E_out.contains(pts) & ~E_in.contains(pts)
    return float(np.sum(dens[mask]) * u.h**u.d)


def caccioppoli_check(u: GridSolution, tensor: HomogenizedTensor, r3: float, t0: float,
                      center=None) -> CaccioppoliReport:
    """Annulus gradient energy over (t0 - r3^2, t0) against r3^d sup^2.

    The energy is integrated over E_{4r3/5} minus E_{3r3/4}. In 1D the
    piecewise-linear interpolant of the nodal gradient is integrated exactly
    over the annulus; in 2D nodes are weighted by cell-centre membership. The
    time integral is the trapezoid rule over saved levels.
    """
    center = np.zeros(u.d) if center is None else np.asarray(center, float)
    ext = r3 * np.sqrt(np.diag(tensor.matrix))
    if not u.contains_box(center - ext, center + ext, t0 - r3**2, t0):
        raise ValueError("cylinder E_r3 x (t0 - r3^2, t0) is not inside the solved domain")
    idx = _time_window(u, t0 - r3**2, t0)
    if idx.size < 2:
        raise ValueError("need at least two saved levels in the cylinder")
    dens = np.array([_annulus_energy(u, u.values[i], tensor, 0.75 * r3, 0.8 * r3, center)
                     for i in idx])
    t = u.times[idx]
    energy = float(np.trapezoid(dens, t))
    sup = cylinder_sup(u, Ellipsoid(tensor, r3, center), t0 - r3**2, t0)
    c_obs = 0.0 if sup == 0 else energy / (r3**u.d * sup**2)
    return CaccioppoliReport(r3, t0, energy, sup, c_obs)
