"""Factorisation S A S^T = I of the homogenized tensor and the ellipsoids E_r."""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

__all__ = ["Ellipsoid", "HomogenizedTensor", "ellipsoid_norm", "factor_S", "inclusion_radii"]


@dataclass(frozen=True)
class HomogenizedTensor:
    """Symmetric positive definite tensor A with its factor S.

    ``S`` is upper triangular with positive diagonal and ``S^T S = A^-1``.
    ``mu`` and ``mu1`` bracket the quadratic form, ``mu |x|^2 <= A x.x``
    and ``A x.x <= mu1 |x|^2``; by default they are the extreme eigenvalues.
    ``asymmetry`` records the defect removed by symmetrisation, if any.
    """

    matrix: np.ndarray
    S: np.ndarray
    mu: float
    mu1: float
    asymmetry: float = 0.0

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def det_S(self) -> float:
        return float(np.prod(np.diag(self.S)))

    def identity_defect(self) -> float:
        """Frobenius norm of S A S^T - I."""
        return float(np.linalg.norm(self.S @ self.matrix @ self.S.T - np.eye(self.d)))


def _leading_minors(a):
    return [np.linalg.det(a[:k, :k]) for k in range(1, a.shape[0] + 1)]


def factor_S(A, mu: float | None = None, mu1: float | None = None,
             asymmetry: float = 0.0) -> HomogenizedTensor:
    """Factor an SPD matrix as S A S^T = I with S upper triangular.

    The lower Cholesky factor of the index-reversed matrix gives ``A = U U^T``
    with ``U`` upper triangular; ``S = U^-1``. This avoids forming ``A^-1``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"tensor must be square, got shape {A.shape}")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * np.abs(A).max()):
        raise ValueError("tensor must be symmetric")
    A = 0.5 * (A + A.T)
    minors = _leading_minors(A)
    for k, mk in enumerate(minors, start=1):
        if not mk > 0:
            raise ValueError(f"tensor is not positive definite: leading minor {k} = {mk:.3e}")
    J = A[::-1, ::-1]
    L = linalg.cholesky(J, lower=True)
    U = L[::-1, ::-1]
    S = linalg.solve_triangular(U, np.eye(A.shape[0]), lower=False)
    eig = np.linalg.eigvalsh(A)
    mu = float(eig[0]) if mu is None else float(mu)
    mu1 = float(eig[-1]) if mu1 is None else float(mu1)
    for a in (A, S):
        a.setflags(write=False)
    return HomogenizedTensor(A, S, mu, mu1, float(asymmetry))


@dataclass(frozen=True)
class Ellipsoid:
    """E_r = {x : |S (x - center)| < r}."""

    tensor: HomogenizedTensor
    r: float
    center: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("radius must be positive")
        c = np.zeros(self.tensor.d) if self.center is None else np.asarray(self.center, float)
        object.__setattr__(self, "center", c)

    def norm(self, x) -> np.ndarray:
        return ellipsoid_norm(self, x)

    def contains(self, x) -> np.ndarray:
        return self.norm(x) < self.r

    def semi_axes(self) -> np.ndarray:
        return self.r * np.sqrt(np.linalg.eigvalsh(self.tensor.matrix))


def ellipsoid_norm(E: Ellipsoid, x) -> np.ndarray:
    """|S (x - center)|; ``x`` has trailing axis of length d."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != E.tensor.d:
        raise ValueError(f"point dimension {x.shape[-1]} does not match tensor dimension {E.tensor.d}")
    y = (x - E.center) @ E.tensor.S.T
    return np.sqrt(np.sum(y * y, axis=-1))


def inclusion_radii(E: Ellipsoid):
    """(sqrt(mu) r, sqrt(mu1) r) with B_inner inside E_r inside B_outer."""
    return np.sqrt(E.tensor.mu) * E.r, np.sqrt(E.tensor.mu1) * E.r
