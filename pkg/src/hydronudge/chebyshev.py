"""Chebyshev machinery for the vertical direction of the layer ``[-l, 0]``.

The vertical coordinate ``z`` is mapped to ``x in [-1, 1]`` by ``z = l (x - 1) / 2``
so that the Gauss-Lobatto node ``x = 1`` is the upper surface and ``x = -1``
the bottom.  Everything is expressed through small dense matrices acting on
Chebyshev coefficient vectors of length ``Nz`` (polynomial degree ``Nz - 1``).
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as C
from numpy.polynomial import legendre as L
from scipy import linalg


def lobatto_points(N: int) -> np.ndarray:
    """Chebyshev-Gauss-Lobatto points ``cos(j pi / N)``, ``j = 0..N`` (descending)."""
    return np.cos(np.pi * np.arange(N + 1) / N)


def integrals_of_t(nmax: int) -> np.ndarray:
    """``int_{-1}^{1} T_m(x) dx`` for ``m = 0..nmax``."""
    m = np.arange(nmax + 1, dtype=float)
    out = np.zeros(nmax + 1)
    even = (m % 2) == 0
    out[even] = 2.0 / (1.0 - m[even] ** 2)
    return out


def mass_matrix(n_rows: int, n_cols: int | None = None) -> np.ndarray:
    """Exact ``int T_i T_j dx`` on ``[-1, 1]`` for ``i < n_rows``, ``j < n_cols``."""
    n_cols = n_rows if n_cols is None else n_cols
    ints = integrals_of_t(n_rows + n_cols)
    i = np.arange(n_rows)[:, None]
    j = np.arange(n_cols)[None, :]
    return 0.5 * (ints[i + j] + ints[np.abs(i - j)])


def vandermonde(x: np.ndarray, ncoef: int) -> np.ndarray:
    return C.chebvander(np.asarray(x, dtype=float), ncoef - 1)


def derivative_matrix(ncoef: int) -> np.ndarray:
    """Coefficient-space d/dx, square (the top coefficient row is zero)."""
    D = np.zeros((ncoef, ncoef))
    for j in range(ncoef):
        e = np.zeros(ncoef)
        e[j] = 1.0
        d = C.chebder(e)
        D[: d.size, j] = d
    return D


def antiderivative_matrix(ncoef: int) -> np.ndarray:
    """Coefficient-space ``int_{-1}^{x}``; maps ``ncoef`` to ``ncoef + 1`` coefficients."""
    A = np.zeros((ncoef + 1, ncoef))
    for j in range(ncoef):
        e = np.zeros(ncoef)
        e[j] = 1.0
        A[:, j] = C.chebint(e, lbnd=-1.0)
    return A


def clenshaw_curtis_weights(N: int) -> np.ndarray:
    """Clenshaw-Curtis weights on the Lobatto points for ``[-1, 1]``."""
    T = vandermonde(lobatto_points(N), N + 1)
    return np.linalg.solve(T.T, integrals_of_t(N))


class VerticalBasis:
    """Galerkin basis for the layer with ``v(-l) = 0`` and ``dv/dz(0) = 0``.

    Holds the Lobatto grid, exact mass/stiffness matrices and an ``L^2``-orthonormal
    eigenbasis ``psi_j`` of ``-d^2/dz^2`` on the subspace of polynomials of degree
    ``<= Nz - 1`` obeying both boundary conditions.
    """

    def __init__(self, Nz: int, depth: float):
        if Nz < 4:
            raise ValueError(f"Nz must be >= 4, got {Nz}")
        self.Nz = Nz
        self.N = N = Nz - 1
        self.depth = l = float(depth)
        self.scale = 2.0 / l  # dx/dz

        self.x = lobatto_points(N)
        self.z = l * (self.x - 1.0) / 2.0
        self.T = vandermonde(self.x, Nz)
        self.Tinv = np.linalg.inv(self.T)
        self.cc_weights = clenshaw_curtis_weights(N) * (l / 2.0)

        self.M = mass_matrix(Nz) * (l / 2.0)
        self.D = derivative_matrix(Nz) * self.scale
        self.I = antiderivative_matrix(Nz) / self.scale

        m = np.arange(Nz, dtype=float)
        self.top_value = np.ones(Nz)
        self.top_slope = m**2 * self.scale
        self.bottom_value = (-1.0) ** m
        self.mean_row = integrals_of_t(N) / 2.0  # vertical average of a coefficient vector

        # Free coefficients c_0..c_{N-2}; the top two are slaved to the boundary rows.
        B = np.vstack([self.bottom_value, self.top_slope])
        self.bc_rows = B
        E = np.zeros((Nz, Nz - 2))
        E[: Nz - 2] = np.eye(Nz - 2)
        E[Nz - 2 :] = -np.linalg.solve(B[:, Nz - 2 :], B[:, : Nz - 2])
        self.extension = E

        K = self.D.T @ self.M @ self.D
        Ks = E.T @ K @ E
        Ms = E.T @ self.M @ E
        lam, phi = linalg.eigh(Ks, Ms)
        psi = E @ phi
        sign = np.sign(psi.T @ self.top_value)
        sign[sign == 0] = 1.0
        self.eigenvalues = lam
        self.psi = psi * sign  # (Nz, n) coefficient vectors, M-orthonormal
        self.n = psi.shape[1]
        # <psi_j, 1>; the discrete barotropic constraint is sum_j beta_j a_j = 0
        self.beta = self.psi.T @ self.M @ np.eye(Nz)[:, 0]

        # Gauss-Legendre nodes exact for the cubic products in the Galerkin projection.
        Q = (3 * N) // 2 + 2
        xq, wq = L.leggauss(Q)
        self.xq = xq
        self.zq = l * (xq - 1.0) / 2.0
        self.wq = wq * (l / 2.0)
        Tq = vandermonde(xq, Nz)
        Tq1 = vandermonde(xq, Nz + 1)
        self.Tq = Tq
        self.Tq_ext = Tq1
        self.psi_q = Tq @ self.psi
        self.dpsi_q = Tq @ self.D @ self.psi
        self.ipsi_q = Tq1 @ self.I @ self.psi
        self.psi_nodes = self.T @ self.psi
        # nodal values at quadrature points -> modal coefficients (exact for degree <= 2Q-1-N)
        self.project_q = (self.psi_q * self.wq[:, None]).T  # (n, Q)
        # least-squares L^2 projection of quadrature-point data to coefficients
        self.coeff_from_q = np.linalg.solve(self.M, (Tq * self.wq[:, None]).T)

    # -- helpers on coefficient vectors along the last axis --------------------
    def to_nodes(self, c: np.ndarray) -> np.ndarray:
        return c @ self.T.T

    def from_nodes(self, f: np.ndarray) -> np.ndarray:
        return f @ self.Tinv.T

    def derivative(self, c: np.ndarray) -> np.ndarray:
        return c @ self.D.T

    def average(self, c: np.ndarray) -> np.ndarray:
        return c @ self.mean_row

    def integral_from_bottom(self, c: np.ndarray) -> np.ndarray:
        """Antiderivative vanishing at ``z = -l``, folded back onto ``Nz`` coefficients.

        The degree ``Nz`` term is aliased onto ``T_{Nz-2}`` which is exact on the
        Lobatto grid, so nodal values (including both ends) are preserved.
        """
        full = c @ self.I.T
        out = full[..., :-1].copy()
        out[..., -2] += full[..., -1]
        return out

    def project_to_modes(self, c: np.ndarray) -> np.ndarray:
        """``L^2`` projection of coefficient vectors onto the boundary-condition space."""
        return c @ (self.M @ self.psi)

    def from_modes(self, a: np.ndarray) -> np.ndarray:
        return a @ self.psi.T
