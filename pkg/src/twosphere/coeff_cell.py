"""Periodic coefficient fields and their cell problems.

A :class:`CoefficientField` wraps an evaluator ``A(y, s)`` for a symmetric,
uniformly elliptic, 1-periodic matrix field. The corrector of direction ``j``
solves ``(d/ds + L1)(chi_j + y_j) = 0`` on the unit cell with zero mean,
where ``L1 = -div(A grad)``. For fields that do not depend on ``s`` the time
derivative is dropped and a single elliptic problem is solved.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import map_coordinates
from scipy.sparse.linalg import LinearOperator, cg

from ._stencil import Stencil
from .geometry import HomogenizedTensor, factor_S

log = logging.getLogger(__name__)

__all__ = [
    "CoefficientField",
    "ConvergenceError",
    "FIELD_PARAMS",
    "POTENTIAL_PARAMS",
    "CorrectorField",
    "PotentialCell",
    "PotentialField",
    "builtin_field",
    "builtin_potential",
    "harmonic_mean_tensor",
    "arithmetic_mean_tensor",
    "homogenize",
    "solve_all_correctors",
    "solve_corrector",
    "solve_corrector_dual",
    "solve_potential_cell",
    "tensor_field",
]

CELL_TOL = 1e-10
MAX_PERIODS = 50


class ConvergenceError(RuntimeError):
    """Iteration stopped before reaching its tolerance."""

    def __init__(self, msg, residual):
        super().__init__(f"{msg} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class CoefficientField:
    """A 1-periodic symmetric matrix field A(y, s).

    ``evaluator(y, s)`` takes points ``y`` of shape ``(..., d)`` and times
    ``s`` broadcastable against ``y[..., 0]`` and returns ``(..., d, d)``.
    """

    d: int
    evaluator: Callable
    mu: float
    tau: float = 1.0
    lam: float = 0.5
    time_dependent: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict)
    constant: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if not 0 < self.mu < 1:
            raise ValueError("ellipticity constant must lie in (0, 1)")
        if self.tau <= 0 or not 0 < self.lam < 1:
            raise ValueError("Hoelder data must satisfy tau > 0, 0 < lambda < 1")

    def __call__(self, y, s=0.0):
        y = np.asarray(y, dtype=float)
        return np.asarray(self.evaluator(y, np.asarray(s, dtype=float)), dtype=float)

    def reversed(self) -> "CoefficientField":
        """The field A(y, -s)."""
        if not self.time_dependent:
            return self
        ev = self.evaluator
        return CoefficientField(self.d, lambda y, s: ev(y, -s), self.mu, self.tau, self.lam,
                                True, self.name + ":reversed", dict(self.params), self.constant)

    def scaled(self, c: float) -> "CoefficientField":
        """c A, c > 0; the ellipticity bracket becomes min(c mu, mu / c)."""
        if c <= 0:
            raise ValueError("scale factor must be positive")
        ev = self.evaluator
        mu = min(c * self.mu, self.mu / c, 0.999)
        return CoefficientField(self.d, lambda y, s: c * ev(y, s), mu, c * self.tau,
                                self.lam, self.time_dependent, f"{c}*{self.name}", dict(self.params),
                                self.constant)

    def check_invariants(self, rng=None, samples=64, atol=1e-12):
        """Sampled symmetry, ellipticity and periodicity checks.

        Returns a dict of the worst defects; raises ``ValueError`` on failure.
        """
        rng = np.random.default_rng(0) if rng is None else rng
        y = rng.uniform(-2, 2, size=(samples, self.d))
        s = rng.uniform(-2, 2, size=samples) if self.time_dependent else np.zeros(samples)
        a = self(y, s)
        sym = float(np.max(np.abs(a - np.swapaxes(a, -1, -2))))
        xi = rng.normal(size=(samples, self.d))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        q = np.einsum("ni,nij,nj->n", xi, a, xi)
        shift = rng.integers(-3, 4, size=(samples, self.d)).astype(float)
        ts = rng.integers(-3, 4, size=samples).astype(float)
        per = float(np.max(np.abs(self(y + shift, s + ts) - a)))
        report = {"symmetry": sym, "q_min": float(q.min()), "q_max": float(q.max()),
                  "periodicity": per}
        if sym > atol:
            raise ValueError(f"coefficient field is not symmetric (defect {sym:.2e})")
        if q.min() < self.mu - atol or q.max() > 1 / self.mu + atol:
            raise ValueError(f"ellipticity bracket [{self.mu}, {1/self.mu}] violated: "
                             f"sampled range [{q.min():.4f}, {q.max():.4f}]")
        if per > 1e-9:
            raise ValueError(f"coefficient field is not 1-periodic (defect {per:.2e})")
        return report


FIELD_PARAMS = {
    "identity": (),
    "constant": ("value",),
    "laminate": ("mean", "amp"),
    "even_laminate": ("mean", "amp"),
    "travelling": ("mean", "amp"),
    "checker": ("mean", "amp"),
    "aniso": ("mean", "amp", "off"),
}
POTENTIAL_PARAMS = {"zero": (), "constant": ("value",), "cos": ("amp", "offset")}


def _iso(fun):
    def ev(y, s):
        a = fun(y, s)
        d = y.shape[-1]
        return a[..., None, None] * np.eye(d)
    return ev


def builtin_field(name: str, d: int = 1, **params) -> CoefficientField:
    """Named analytic test fields.

    ``identity``       A = I
    ``constant``       A = value * I
    ``laminate``       A = (mean + amp sin 2 pi y_1) I
    ``travelling``     A = (mean + amp sin 2 pi (y_1 + s)) I, time dependent
    ``checker``        A = (mean + amp sin 2 pi y_1 sin 2 pi y_2) I, d = 2
    ``aniso``          full symmetric 2x2 field with smooth off-diagonal part
    ``even_laminate``  A = (mean + amp cos 2 pi y_1) I, even in y
    """
    if name not in FIELD_PARAMS:
        raise ValueError(f"unknown field '{name}'")
    extra = sorted(set(params) - set(FIELD_PARAMS[name]))
    if extra:
        raise ValueError(f"field '{name}' does not take parameters {', '.join(extra)}")
    two_pi = 2 * np.pi
    if name == "identity":
        return CoefficientField(d, _iso(lambda y, s: np.ones(y.shape[:-1])), 0.999, 1.0, 0.5,
                                False, name, {}, True)
    if name == "constant":
        c = float(params.get("value", 2.0))
        mu = min(c, 1 / c) * 0.999
        return CoefficientField(d, _iso(lambda y, s: np.full(y.shape[:-1], c)), mu, 1.0, 0.5,
                                False, name, {"value": c}, True)
    mean = float(params.get("mean", 2.0))
    amp = float(params.get("amp", 1.0))
    if amp < 0 or mean - amp <= 0:
        raise ValueError("need mean > amp >= 0 for an elliptic field")
    lo, hi = mean - amp, mean + amp
    mu = min(lo, 1 / hi) * 0.999
    tau = max(two_pi * amp, 1e-12)
    info = {"mean": mean, "amp": amp}
    if name == "laminate":
        return CoefficientField(d, _iso(lambda y, s: mean + amp * np.sin(two_pi * y[..., 0])),
                                mu, tau, 0.5, False, name, info)
    if name == "even_laminate":
        return CoefficientField(d, _iso(lambda y, s: mean + amp * np.cos(two_pi * y[..., 0])),
                                mu, tau, 0.5, False, name, info)
    if name == "travelling":
        return CoefficientField(
            d, _iso(lambda y, s: mean + amp * np.sin(two_pi * (y[..., 0] + s))),
            mu, tau, 0.5, True, name, info)
    if name == "checker":
        if d != 2:
            raise ValueError("checker field is two-dimensional")
        return CoefficientField(
            2, _iso(lambda y, s: mean + amp * np.sin(two_pi * y[..., 0]) * np.sin(two_pi * y[..., 1])),
            mu, tau, 0.5, False, name, info)
    if name == "aniso":
        if d != 2:
            raise ValueError("aniso field is two-dimensional")
        off = float(params.get("off", 0.5))

        def ev(y, s):
            a11 = mean + amp * np.sin(two_pi * y[..., 0])
            a22 = mean + amp * np.cos(two_pi * y[..., 1])
            a12 = off * np.cos(two_pi * (y[..., 0] + y[..., 1]))
            return np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)

        mu = min(lo - off, 1 / (hi + off)) * 0.999
        return CoefficientField(2, ev, mu, tau, 0.5, False, name, dict(info, off=off))
    raise ValueError(f"unknown field '{name}'")


def tensor_field(matrix, name="homogenized") -> CoefficientField:
    """Constant field equal to ``matrix`` everywhere (e.g. a homogenized tensor)."""
    a = np.atleast_2d(np.asarray(getattr(matrix, "matrix", matrix), dtype=float))
    eig = np.linalg.eigvalsh(a)
    mu = min(eig[0], 1 / eig[-1]) * 0.999
    return CoefficientField(a.shape[0], lambda y, s: np.broadcast_to(a, y.shape[:-1] + a.shape),
                            mu, 1.0, 0.5, False, name, {}, True)


# ---------------------------------------------------------------- correctors

@dataclass(frozen=True)
class CorrectorField:
    """Grid samples of chi_j on the unit cell.

    ``values`` has shape ``(n_time, *space)`` for time-dependent fields and
    ``space`` otherwise. ``grad[k]`` holds d chi_j / d y_k sampled on the
    k-faces, i.e. at ``y_k = (i_k + 1/2) h``; other coordinates sit on nodes.
    """

    j: int
    values: np.ndarray
    grad: np.ndarray
    n_space: tuple
    n_time: int
    residual: float
    time_dependent: bool
    periods: int = 0

    @property
    def d(self) -> int:
        return len(self.n_space)

    def mean(self) -> float:
        return float(np.mean(self.values))

    def max_grad(self) -> float:
        return float(np.max(np.abs(self.grad)))

    def grad_at(self, y, s=0.0) -> np.ndarray:
        """Periodic multilinear interpolation of grad chi_j; returns (..., d)."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        lead = y.shape[:-1]
        y = y.reshape(-1, self.d)
        out = np.empty((y.shape[0], self.d))
        for k in range(self.d):
            coords = [y[:, a] * self.n_space[a] - (0.5 if a == k else 0.0) for a in range(self.d)]
            g = self.grad[k]
            if self.time_dependent:
                s_arr = np.broadcast_to(np.asarray(s, dtype=float), (y.shape[0],))
                coords = [s_arr * self.n_time] + coords
            out[:, k] = map_coordinates(g, coords, order=1, mode="grid-wrap")
        return out.reshape(lead + (self.d,))


def _face_coef(field, stencil, s):
    coef = []
    for k in range(stencil.d):
        pts = stencil.face_points(np.zeros(stencil.d), k)
        a = field(pts, s)
        coef.append([a[..., k, l] for l in range(stencil.d)])
    return coef


def _fft_preconditioner(stencil, weights, shift=0.0):
    lam = stencil.laplacian_symbol(weights) + shift
    inv = np.zeros_like(lam)
    nz = lam > 0
    inv[nz] = 1.0 / lam[nz]
    shape = stencil.shape

    def apply(r):
        rh = np.fft.fftn(r.reshape(shape))
        return np.real(np.fft.ifftn(rh * inv)).ravel()

    return LinearOperator((stencil.size, stencil.size), matvec=apply)


def _pcg(A, b, M, atol, maxiter=400, x0=None, project=False):
    if project:
        b = b - b.mean()
    x, info = cg(A, b, x0=x0, rtol=0.0, atol=atol, M=M, maxiter=maxiter)
    if project:
        x = x - x.mean()
    return x, info


def _rms(v):
    return float(np.sqrt(np.mean(np.square(v))))


def _check_resolution(resolution, d, time_dependent):
    if np.isscalar(resolution):
        n_space, n_time = (int(resolution),) * d, int(resolution)
    else:
        res = tuple(int(r) for r in resolution)
        if time_dependent and len(res) == d + 1:
            n_space, n_time = res[:d], res[d]
        elif len(res) == d:
            n_space, n_time = res, max(res)
        elif len(res) == 2 and d != 2:
            n_space, n_time = (res[0],) * d, res[1]
        else:
            raise ValueError(f"cannot interpret resolution {resolution} for d={d}")
    if min(n_space) < 8 or (time_dependent and n_time < 8):
        raise ValueError("cell resolution must be at least 8 points per axis")
    return tuple(n_space), n_time


def _face_grads(stencil, chi):
    return np.stack([(stencil.D[k] @ chi).reshape(stencil.shape) for k in range(stencil.d)])


def solve_corrector(field: CoefficientField, j: int, resolution=256, tol: float = CELL_TOL,
                    max_periods: int = MAX_PERIODS) -> CorrectorField:
    """Corrector chi_j of the (parabolic) cell problem, zero mean on the cell.

    ``j`` is zero-based. ``resolution`` is either one integer, a tuple of
    spatial sizes, or ``(n_space..., n_time)`` for time-dependent fields.
    The returned ``residual`` is the root-mean-square discrete residual of
    ``(d/ds + L1)(chi_j + y_j)`` over the grid.
    """
    d = field.d
    if not 0 <= j < d:
        raise ValueError(f"component index {j} outside 0..{d - 1}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    n_space, n_time = _check_resolution(resolution, d, field.time_dependent)
    st = Stencil(n_space, [1.0 / n for n in n_space], periodic=True)
    N = st.size
    # CG stopping threshold in the 2-norm; the rms residual is ||r|| / sqrt(N).
    # At fine grids the rounding floor of L chi is ~1e-11, so ask for 5% of tol.
    atol = 0.05 * tol * np.sqrt(N)
    if not field.time_dependent:
        coef = _face_coef(field, st, 0.0)
        L = st.operator(coef)
        b = st.linear_rhs(coef, j)
        diag_means = [float(np.mean(coef[k][k])) for k in range(d)]
        if min(diag_means) <= 0:
            raise ValueError("singular cell system: non-positive diagonal coefficient")
        M = _fft_preconditioner(st, diag_means)
        chi, info = _pcg(L, b, M, atol, project=True)
        res = _rms(L @ chi - (b - b.mean()))
        res_full = _rms(L @ chi - b)
        if info != 0 and res > tol:
            raise ConvergenceError("cell solve did not converge", res)
        if res_full > tol:
            raise ConvergenceError("cell residual above tolerance", res_full)
        chi = chi - chi.mean()
        return CorrectorField(j, chi.reshape(n_space), _face_grads(st, chi), n_space, 1,
                              res_full, False, 0)

    k = 1.0 / n_time
    s_levels = k * np.arange(1, n_time + 1)
    ops, rhs, precs = [], [], []
    for s in s_levels:
        coef = _face_coef(field, st, s)
        L = st.operator(coef)
        ops.append(L)
        rhs.append(st.linear_rhs(coef, j))
        precs.append(_fft_preconditioner(st, [float(np.mean(coef[kk][kk])) for kk in range(d)],
                                         shift=1.0 / k))
    eye = sp.identity(N, format="csr")
    systems = [eye / k + L for L in ops]
    # per-step solves must sit well below the space-time tolerance
    step_atol = 0.05 * tol * np.sqrt(N) * k
    chi0 = np.zeros(N)
    defect = np.inf
    periods = 0
    levels = None
    while periods < max_periods:
        periods += 1
        cur = chi0
        levels = []
        for n in range(n_time):
            x, _ = _pcg(systems[n], cur / k + rhs[n], precs[n], step_atol, x0=cur)
            levels.append(x)
            cur = x
        defect = float(np.max(np.abs(cur - chi0)))
        chi0 = cur
        log.debug("period %d: defect %.3e", periods, defect)
        if defect <= tol:
            break
    else:
        raise ConvergenceError(f"period map not converged after {max_periods} periods", defect)
    # levels[n] is chi at s = (n+1) k; reorder so index n is s = n k
    vals = np.stack([levels[-1]] + levels[:-1])
    vals -= vals.mean()
    # residual of each step (n -> n+1), periodic closure at the last step
    resid = []
    for n in range(n_time):
        prev = vals[n]
        nxt = vals[(n + 1) % n_time]
        resid.append((nxt - prev) / k + ops[n] @ nxt - rhs[n])
    res = _rms(np.concatenate(resid))
    if res > max(tol, 1e-8):
        raise ConvergenceError("space-time cell residual above tolerance", res)
    grads = np.stack([_face_grads(st, v) for v in vals], axis=1)
    return CorrectorField(j, vals.reshape((n_time,) + tuple(n_space)), grads,
                          n_space, n_time, res, True, periods)


def solve_corrector_dual(field: CoefficientField, j: int, resolution=256,
                         tol: float = CELL_TOL) -> CorrectorField:
    """Corrector of the time-reversed field A(y, -s)."""
    return solve_corrector(field.reversed(), j, resolution, tol)


def solve_all_correctors(field, resolution=256, tol=CELL_TOL, jobs=1):
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as ex:
            return list(ex.map(lambda j: solve_corrector(field, j, resolution, tol), range(field.d)))
    return [solve_corrector(field, j, resolution, tol) for j in range(field.d)]


def homogenize(field: CoefficientField, correctors=None, resolution=256,
               tol: float = CELL_TOL, asym_tol: float = 1e-6) -> HomogenizedTensor:
    """Effective tensor a_ij = mean(a_ij + a_ik d chi_j / d y_k) over the cell.

    Missing correctors are solved on the given resolution. The result is
    symmetrised; the removed defect is stored on the returned tensor and a
    warning is issued when it exceeds ``asym_tol``.
    """
    d = field.d
    if correctors is None:
        correctors = solve_all_correctors(field, resolution, tol)
    if len(correctors) != d:
        raise ValueError(f"need {d} correctors, got {len(correctors)}")
    grids = {(c.n_space, c.n_time, c.time_dependent) for c in correctors}
    if len(grids) != 1:
        raise ValueError("correctors must share one cell grid")
    n_space, n_time, td = grids.pop()
    st = Stencil(n_space, [1.0 / n for n in n_space], periodic=True)
    by_j = {c.j: c for c in correctors}
    s_levels = np.arange(n_time) / n_time if td else [0.0]
    A = np.zeros((d, d))
    for n, s in enumerate(s_levels):
        coef = _face_coef(field, st, s)
        for j in range(d):
            v = by_j[j].values[n].ravel() if td else by_j[j].values.ravel()
            for i in range(d):
                A[i, j] += np.mean(st.flux_row(coef, v, i, j))
    A /= len(s_levels)
    asym = float(np.max(np.abs(A - A.T)))
    if asym > asym_tol:
        warnings.warn(f"effective tensor asymmetry {asym:.2e} exceeds {asym_tol:.0e}", RuntimeWarning)
    A = 0.5 * (A + A.T)
    eig = np.linalg.eigvalsh(A)
    if eig[0] < field.mu * (1 - 1e-9):
        raise ValueError(f"effective tensor violates ellipticity: min eigenvalue {eig[0]:.4e} < mu")
    return factor_S(A, asymmetry=asym)


def _cell_samples(field, n, s_levels):
    axes = [(np.arange(n) + 0.5) / n] * field.d
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return np.stack([field(pts, s) for s in s_levels])


def arithmetic_mean_tensor(field, n=256, n_time=16):
    """Midpoint-rule cell average of A (upper Voigt bound)."""
    s = np.arange(n_time) / n_time if field.time_dependent else [0.0]
    a = _cell_samples(field, n, s)
    return a.reshape(-1, field.d, field.d).mean(axis=0)


def harmonic_mean_tensor(field, n=256, n_time=16):
    """Inverse of the cell average of A^-1 (lower Reuss bound)."""
    s = np.arange(n_time) / n_time if field.time_dependent else [0.0]
    a = _cell_samples(field, n, s).reshape(-1, field.d, field.d)
    return np.linalg.inv(np.linalg.inv(a).mean(axis=0))


# ---------------------------------------------------------------- potential

@dataclass(frozen=True)
class PotentialField:
    """A 1-periodic scalar potential V(z), time independent."""

    d: int
    evaluator: Callable
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(np.asarray(self.evaluator(z), dtype=float), z.shape[:-1])


def builtin_potential(name: str, d: int = 1, **params) -> PotentialField:
    """``zero``, ``constant`` (value) or ``cos`` (amp * cos 2 pi z_1 + offset)."""
    if name not in POTENTIAL_PARAMS:
        raise ValueError(f"unknown potential '{name}'")
    extra = sorted(set(params) - set(POTENTIAL_PARAMS[name]))
    if extra:
        raise ValueError(f"potential '{name}' does not take parameters {', '.join(extra)}")
    if name == "zero":
        return PotentialField(d, lambda z: np.zeros(z.shape[:-1]), name, {})
    if name == "constant":
        c = float(params.get("value", 1.0))
        return PotentialField(d, lambda z: np.full(z.shape[:-1], c), name, {"value": c})
    if name == "cos":
        amp = float(params.get("amp", 1.0))
        off = float(params.get("offset", 0.0))
        return PotentialField(d, lambda z: off + amp * np.cos(2 * np.pi * z[..., 0]), name,
                              {"amp": amp, "offset": off})
    raise ValueError(f"unknown potential '{name}'")


@dataclass(frozen=True)
class PotentialCell:
    """Solution of Laplace(psi) = M(V) - V on the cell with zero-mean psi.

    Samples live on the nodes ``z = i/n``; ``grad_psi`` has shape (d, *grid).
    """

    V: np.ndarray
    mean_V: float
    psi: np.ndarray
    grad_psi: np.ndarray
    residual: float

    @property
    def d(self) -> int:
        return self.psi.ndim


def solve_potential_cell(V, resolution=64, tol: float = 1e-10) -> PotentialCell:
    """Spectral Poisson solve on the torus.

    ``V`` is a :class:`PotentialField` or a callable of points ``(..., d)``
    (in which case ``d`` is taken from a tuple ``resolution``), or an array
    of node samples.
    """
    if isinstance(V, np.ndarray):
        samples = np.asarray(V, dtype=float)
    else:
        d = V.d if isinstance(V, PotentialField) else len(np.atleast_1d(resolution))
        n = (int(resolution),) * d if np.isscalar(resolution) else tuple(resolution)
        axes = [np.arange(m) / m for m in n]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        samples = np.asarray(V(pts), dtype=float)
    shape = samples.shape
    if min(shape) < 8:
        raise ValueError("cell resolution must be at least 8 points per axis")
    M = float(samples.mean())
    f = M - samples
    fh = np.fft.fftn(f)
    ks = np.meshgrid(*[2 * np.pi * np.fft.fftfreq(n, d=1.0 / n) for n in shape], indexing="ij")
    k2 = sum(k * k for k in ks)
    psi_h = np.zeros_like(fh)
    nz = k2 > 0
    psi_h[nz] = -fh[nz] / k2[nz]
    psi = np.real(np.fft.ifftn(psi_h))
    psi -= psi.mean()
    grad = np.stack([np.real(np.fft.ifftn(1j * k * psi_h)) for k in ks])
    lap = np.real(np.fft.ifftn(-k2 * np.fft.fftn(psi)))
    res = _rms(lap - (f - f.mean()))
    if res > tol * max(1.0, float(np.max(np.abs(f)))):
        raise ConvergenceError("spectral Poisson residual above tolerance", res)
    return PotentialCell(samples, M, psi, grad, res)
