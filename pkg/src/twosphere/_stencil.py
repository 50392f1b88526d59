"""Sparse flux-form discretisation of -div(A grad u) on a uniform tensor grid.

Nodes sit at ``x = origin + i*h``. Row ``k`` of ``A`` is sampled on the
k-faces, midway between node ``i`` and ``i + e_k``. Diagonal entries couple
compact differences across each face; off-diagonal entries couple the face
difference with a face-averaged centred difference in the transverse
direction and are symmetrised, so the assembled matrix is symmetric.
"""

import numpy as np
import scipy.sparse as sp

__all__ = ["Stencil"]


def _shift_1d(n, periodic):
    if periodic:
        return sp.csr_matrix((np.ones(n), (np.arange(n), (np.arange(n) + 1) % n)), shape=(n, n))
    return sp.eye(n, k=1, format="csr")


def _embed(mats, axis, shape):
    """Kronecker product placing ``mats`` on ``axis`` and identities elsewhere."""
    out = None
    for ax, n in enumerate(shape):
        m = mats if ax == axis else sp.identity(n, format="csr")
        out = m if out is None else sp.kron(out, m, format="csr")
    return out


class Stencil:
    """Difference operators for a node grid of ``shape`` with steps ``h``."""

    def __init__(self, shape, h, periodic):
        self.shape = tuple(int(n) for n in shape)
        self.h = tuple(float(x) for x in np.broadcast_to(h, (len(self.shape),)))
        self.periodic = periodic
        self.d = len(self.shape)
        self.size = int(np.prod(self.shape))
        eye = sp.identity(self.size, format="csr")
        self.shift = [_embed(_shift_1d(n, periodic), k, self.shape) for k, n in enumerate(self.shape)]
        # forward difference, node -> k-face
        self.D = [(self.shift[k] - eye) / self.h[k] for k in range(self.d)]
        self._eye = eye
        self._G = {}

    def G(self, k, l):
        """Derivative in ``l`` averaged onto the k-faces."""
        key = (k, l)
        if key not in self._G:
            S_l = self.shift[l]
            C_l = (S_l - S_l.T) / (2 * self.h[l])
            self._G[key] = 0.5 * (self._eye + self.shift[k]) @ C_l
        return self._G[key]

    def face_points(self, origin, k):
        """Coordinates of the k-faces, shape (*shape, d)."""
        axes = [origin[a] + self.h[a] * np.arange(n) + (0.5 * self.h[a] if a == k else 0.0)
                for a, n in enumerate(self.shape)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack(grids, axis=-1)

    def node_points(self, origin):
        axes = [origin[a] + self.h[a] * np.arange(n) for a, n in enumerate(self.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @staticmethod
    def has_cross(face_coef):
        d = len(face_coef)
        return any(np.any(face_coef[k][l] != 0) for k in range(d) for l in range(d) if l != k)

    def operator(self, face_coef):
        """Matrix of -div(A grad .) given ``face_coef[k][l]`` = a_kl on k-faces (flattened)."""
        L = None
        for k in range(self.d):
            term = self.D[k].T @ sp.diags(face_coef[k][k].ravel()) @ self.D[k]
            L = term if L is None else L + term
        if self.has_cross(face_coef):
            for k in range(self.d):
                for l in range(self.d):
                    if l == k:
                        continue
                    a = sp.diags(face_coef[k][l].ravel())
                    G = self.G(k, l)
                    L = L + 0.5 * (self.D[k].T @ a @ G + G.T @ a @ self.D[k])
        return L.tocsr()

    def linear_rhs(self, face_coef, j):
        """-(operator applied to the linear function y_j), for periodic grids."""
        b = -(self.D[j].T @ face_coef[j][j].ravel())
        for k in range(self.d):
            if k != j:
                b -= 0.5 * (self.D[k].T @ face_coef[k][j].ravel())
        for l in range(self.d):
            if l != j:
                b -= 0.5 * (self.G(j, l).T @ face_coef[j][l].ravel())
        return b

    def flux_row(self, face_coef, v, i, j):
        """Per-node integrand of B(y_i, v) where v = chi + y_j (periodic grids).

        Averaging this over the grid gives the (i, j) entry of the effective
        tensor: a_ii D_i v + 1/2 sum_{l != i} a_il G_il v on i-faces plus
        1/2 sum_{k != i} a_ki D_k v on k-faces.
        """
        def dk(k):
            return self.D[k] @ v + (1.0 if k == j else 0.0)

        def gkl(k, l):
            return self.G(k, l) @ v + (1.0 if l == j else 0.0)

        out = face_coef[i][i].ravel() * dk(i)
        for l in range(self.d):
            if l != i:
                out = out + 0.5 * face_coef[i][l].ravel() * gkl(i, l)
        for k in range(self.d):
            if k != i:
                out = out + 0.5 * face_coef[k][i].ravel() * dk(k)
        return out

    def laplacian_symbol(self, weights):
        """Eigenvalues of sum_k w_k D_k^T D_k on the periodic grid (FFT layout)."""
        lam = np.zeros(self.shape)
        for k, n in enumerate(self.shape):
            theta = 2 * np.pi * np.fft.fftfreq(n)
            ev = (2 - 2 * np.cos(theta)) / self.h[k] ** 2
            shape = [1] * self.d
            shape[k] = n
            lam = lam + weights[k] * ev.reshape(shape)
        return lam
