"""Shifted Chebyshev basis on [-h, 0] and orthogonal projection.

``p_k(t) = T_k(2t/h + 1)`` so that ``p_k(0) = 1`` and ``p_k(-h) = (-1)^k``;
the weight is ``w(t) = 1/sqrt(1 - (2t/h + 1)^2)``.  Double precision is
enough here: these routines feed tests and the approximation-error bound, not
the criterion matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChebyshevBasis:
    h: float
    N: int

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.N < 0:
            raise ValueError("N must be non-negative")

    def to_unit(self, theta):
        return 2.0 * np.asarray(theta, dtype=float) / self.h + 1.0

    def from_unit(self, x):
        return (np.asarray(x, dtype=float) - 1.0) * self.h / 2.0

    def weight(self, theta):
        x = self.to_unit(theta)
        return 1.0 / np.sqrt(1.0 - x * x)


@dataclass(frozen=True)
class ProjectionCoefficients:
    N: int
    n: int
    h: float
    Q: np.ndarray      # (N, n): Chebyshev coefficients, row k multiplies p_k
    Phi: np.ndarray    # (N, n): monomial coefficients, row k multiplies t^k

    def eval_chebyshev(self, theta):
        basis = eval_basis(ChebyshevBasis(self.h, self.N), theta)
        return basis @ self.Q

    def eval_monomial(self, theta):
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        # Horner in the monomial form
        out = np.zeros((t.size, self.n))
        for k in range(self.N - 1, -1, -1):
            out = out * t[:, None] + self.Phi[k]
        return out if np.ndim(theta) else out[0]

    @property
    def Q_stacked(self):
        return self.Q.reshape(-1)

    @property
    def Phi_stacked(self):
        return self.Phi.reshape(-1)


def eval_basis(basis: ChebyshevBasis, theta, check: bool = True) -> np.ndarray:
    """Values ``p_0(t) .. p_{N-1}(t)`` by the three-term recurrence.

    Scalar ``theta`` gives shape ``(N,)``; an array gives ``(len, N)``.
    """
    t = np.asarray(theta, dtype=float)
    if check:
        tol = 1e-12 * basis.h
        if np.any(t < -basis.h - tol) or np.any(t > tol):
            raise ValueError(f"theta outside [-h, 0] (h={basis.h})")
    x = np.clip(basis.to_unit(t), -1.0, 1.0)
    out = np.empty(x.shape + (basis.N,))
    if basis.N > 0:
        out[..., 0] = 1.0
    if basis.N > 1:
        out[..., 1] = x
    for k in range(2, basis.N):
        out[..., k] = 2.0 * x * out[..., k - 1] - out[..., k - 2]
    return out


def gauss_nodes(basis: ChebyshevBasis, count: int):
    """Chebyshev-Gauss nodes on [-h, 0] and weights for ``∫ f w dt``."""
    m = np.arange(1, count + 1)
    x = np.cos((2 * m - 1) * np.pi / (2 * count))
    nodes = basis.from_unit(x)
    weights = np.full(count, np.pi / count) * (basis.h / 2.0)
    return nodes, weights


def norms_squared(basis: ChebyshevBasis, N: int | None = None) -> np.ndarray:
    """``∫ p_k^2 w dt``: ``pi h/2`` for ``k = 0`` and ``pi h/4`` otherwise."""
    N = basis.N if N is None else N
    d = np.full(N, np.pi * basis.h / 4.0)
    if N:
        d[0] = np.pi * basis.h / 2.0
    return d


def gram_matrices(basis: ChebyshevBasis, N: int | None = None):
    """``(D_N, S_N, T_N)`` for the scalar case; tensor with ``I_n`` for vectors.

    ``D_N = ∫ P P^T w``   (diagonal),
    ``S_N = ∫ Θ Θ^T w``   (Hankel matrix of weighted monomial moments),
    ``T_N = ∫ P Θ^T w``   (upper triangular link, ``Θ^T = P^T D_N^{-1} T_N``).
    """
    N = basis.N if N is None else N
    nodes, weights = gauss_nodes(basis, max(2 * N, 2))   # exact up to degree 4N-1
    P = eval_basis(ChebyshevBasis(basis.h, N), nodes, check=False)     # (m, N)
    Theta = nodes[:, None] ** np.arange(N)[None, :]
    Dn = (P * weights[:, None]).T @ P
    S = (Theta * weights[:, None]).T @ Theta
    T = (P * weights[:, None]).T @ Theta
    return Dn, S, T


def project(phi, basis: ChebyshevBasis, N: int | None = None,
            nodes: int | None = None) -> ProjectionCoefficients:
    """Orthogonal projection of ``phi`` onto ``p_0 .. p_{N-1}``.

    ``phi`` maps an array of ``t`` values to an array of shape ``(len, n)``
    (or ``(len,)`` for scalar functions).  Coefficients come from
    Chebyshev-Gauss quadrature with ``4N`` nodes; the monomial coefficients
    follow from the triangular link ``Phi = T_N^{-1} D_N Q``.
    """
    N = basis.N if N is None else N
    if N < 1:
        raise ValueError("N must be >= 1")
    count = nodes or 4 * N
    t, wts = gauss_nodes(basis, count)
    vals = np.asarray(phi(t), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if not np.all(np.isfinite(vals)):
        raise ValueError("phi returned non-finite values at quadrature nodes")
    Pm = eval_basis(ChebyshevBasis(basis.h, N), t, check=False)
    d = norms_squared(basis, N)
    Q = (Pm * wts[:, None]).T @ vals / d[:, None]
    Dn, _, T = gram_matrices(basis, N)
    Dn = np.diag(np.diag(Dn))
    import scipy.linalg as sla
    Phi = sla.solve_triangular(T, Dn @ Q, lower=False)
    return ProjectionCoefficients(N=N, n=vals.shape[1], h=basis.h, Q=Q, Phi=Phi)


def error_bound(N: int, h: float, r: float) -> float:
    """``4 (h r / 2)^N / N!`` evaluated in log space."""
    if N < 0 or h <= 0 or r < 0:
        raise ValueError("need N >= 0, h > 0, r >= 0")
    if N == 0:
        return 4.0
    if r == 0:
        return 0.0
    return math.exp(math.log(4.0) + N * math.log(h * r / 2.0) - math.lgamma(N + 1))


def sup_norm_error(phi, coeffs: ProjectionCoefficients, grid: int = 2001) -> float:
    """Estimate ``sup ‖phi - phi_N‖`` on a uniform grid plus Chebyshev extrema."""
    h = coeffs.h
    uniform = np.linspace(-h, 0.0, grid)
    K = max(coeffs.N, 1)
    extrema = ChebyshevBasis(h, 1).from_unit(np.cos(np.pi * np.arange(K + 1) / K))
    t = np.concatenate([uniform, extrema])
    vals = np.asarray(phi(t), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    approx = coeffs.eval_chebyshev(t)
    return float(np.max(np.linalg.norm(vals - approx, axis=1)))
