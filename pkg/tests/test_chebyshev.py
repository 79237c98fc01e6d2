import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neutralstab.chebyshev import (ChebyshevBasis, error_bound, eval_basis, gram_matrices,
                                   norms_squared, project, sup_norm_error)

H = 1.3


def test_first_three_polynomials():
    b = ChebyshevBasis(H, 3)
    t = np.linspace(-H, 0, 7)
    P = eval_basis(b, t)
    assert np.allclose(P[:, 0], 1)
    assert np.allclose(P[:, 1], 2 * t / H + 1)
    assert np.allclose(P[:, 2], 8 * t / H + 8 * t**2 / H**2 + 1)


def test_special_points():
    b = ChebyshevBasis(H, 6)
    assert np.allclose(eval_basis(b, 0.0), 1)
    assert np.allclose(eval_basis(b, -H), [(-1) ** k for k in range(6)])
    assert np.allclose(eval_basis(b, -H / 2), [1, 0, -1, 0, 1, 0], atol=1e-15)


def test_domain_check():
    with pytest.raises(ValueError):
        eval_basis(ChebyshevBasis(H, 3), 0.1)
    with pytest.raises(ValueError):
        ChebyshevBasis(-1.0, 3)


def test_orthogonality():
    b = ChebyshevBasis(H, 8)
    Dn, _, _ = gram_matrices(b)
    assert np.allclose(Dn, np.diag(norms_squared(b)), atol=1e-13)
    assert norms_squared(b)[0] == pytest.approx(math.pi * H / 2)
    assert norms_squared(b)[3] == pytest.approx(math.pi * H / 4)


def test_link_matrix_triangular():
    b = ChebyshevBasis(H, 6)
    Dn, S, T = gram_matrices(b)
    assert np.allclose(np.tril(T, -1), 0, atol=1e-13)
    # Θ^T = P^T D^{-1} T  =>  S = T^T D^{-1} T
    assert np.allclose(S, T.T @ np.linalg.solve(Dn, T), rtol=1e-11, atol=1e-13)


def test_project_constant():
    c = np.array([2.0, -1.0])
    pc = project(lambda t: np.tile(c, (len(t), 1)), ChebyshevBasis(H, 4))
    assert np.allclose(pc.Q[0], c) and np.allclose(pc.Q[1:], 0, atol=1e-14)
    assert np.allclose(pc.Phi[0], c) and np.allclose(pc.Phi[1:], 0, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.lists(st.floats(-3, 3), min_size=8, max_size=8))
def test_polynomials_reproduced(N, coef):
    coef = np.array(coef[:N])
    phi = lambda t: np.polyval(coef[::-1], t)
    pc = project(phi, ChebyshevBasis(H, N))
    t = np.linspace(-H, 0, 101)
    assert np.max(np.abs(pc.eval_chebyshev(t)[:, 0] - phi(t))) <= 1e-12 * (1 + np.abs(coef).sum())
    assert np.allclose(pc.Phi[:, 0], coef, atol=1e-10 * (1 + np.abs(coef).sum()))


def test_two_forms_agree():
    phi = lambda t: np.stack([np.sin(3 * t), np.exp(t)], axis=1)
    pc = project(phi, ChebyshevBasis(H, 7))
    t = np.linspace(-H, 0, 50)
    assert np.allclose(pc.eval_chebyshev(t), pc.eval_monomial(t), atol=1e-10)
    assert pc.Q_stacked.shape == (14,)


def test_cos_bound_example1():
    r = 2 / 0.7
    h = 1.0
    phi = lambda t: np.cos(r * t)
    pc = project(phi, ChebyshevBasis(h, 8))
    assert sup_norm_error(phi, pc) <= error_bound(8, h, r)


def test_error_bound_values():
    assert error_bound(0, 1.0, 3.0) == 4.0
    assert error_bound(3, 2.0, 1.0) == pytest.approx(4 / 6)
    assert error_bound(200, 1.0, 5.0) < 1e-200
    assert error_bound(5, 1.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        error_bound(-1, 1.0, 1.0)
