import io

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from mpmath import mp

from neutralstab import precision as prec
from neutralstab.lyapunov import (LyapunovMatrixError, commutation, dump_U_csv, eval_U,
                                  eval_U_derivatives, lyapunov_condition_check, pkron, residuals,
                                  solve_delay_lyapunov, unvec, vec)
from neutralstab.system import NeutralSystem, scalar_system

from conftest import random_system

square = st.integers(1, 3).flatmap(
    lambda n: st.tuples(*[st.lists(st.floats(-5, 5), min_size=n * n, max_size=n * n)
                          for _ in range(3)]).map(
        lambda t: [np.array(x).reshape(n, n) for x in t]))


@settings(max_examples=40, deadline=None)
@given(square)
def test_pkron_vectorization_identity(mats):
    A, X, B = mats
    lhs = vec(A @ X @ B)
    rhs = pkron(A, B) @ vec(X)
    assert np.allclose(lhs, rhs, rtol=1e-14, atol=1e-14 * (1 + np.abs(lhs).max()))


def test_unvec_inverts_vec():
    X = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(unvec(vec(X), 3), X)


def test_commutation_transposes():
    X = prec.to_mp(np.arange(4.0).reshape(2, 2))
    K = commutation(2)
    assert np.array_equal(K @ vec(X), vec(X.T))


def test_delay_free_scalar(digits32, delay_free):
    dlm = solve_delay_lyapunov(delay_free)
    for t in ("0", "0.25", "0.5", "1"):
        assert abs(eval_U(dlm, t)[0, 0] - mp.exp(-mp.mpf(t)) / 2) < mp.mpf(10) ** -28


def test_delay_free_matrix_closed_form(digits32):
    A0 = np.array([[-2.0, 1.0], [0.0, -1.0]])
    s = NeutralSystem(A0, np.zeros((2, 2)), np.zeros((2, 2)), 0.8)
    dlm = solve_delay_lyapunov(s)
    U0 = prec.to_float(dlm.U0)
    assert np.allclose(A0.T @ U0 + U0 @ A0, -np.eye(2), atol=1e-14)
    assert np.allclose(U0, sla.solve_continuous_lyapunov(A0.T, -np.eye(2)), atol=1e-14)
    for t in (0.1, 0.4, 0.8):
        assert np.allclose(prec.to_float(eval_U(dlm, t)), U0 @ sla.expm(A0 * t), atol=1e-13)


def test_symmetry_property(digits32, matrix_system):
    dlm = solve_delay_lyapunov(matrix_system)
    for t in ("0.1", "0.35", "0.69"):
        diff = eval_U(dlm, "-" + t) - eval_U(dlm, t).T
        assert prec.norm_fro(diff) < mp.mpf(10) ** -28
    assert prec.norm_fro(dlm.U0 - dlm.U0.T) < mp.mpf(10) ** -28


def test_derivative_conventions(digits32, matrix_system):
    dlm = solve_delay_lyapunov(matrix_system)
    t = mp.mpf("0.3")
    assert prec.norm_fro(eval_U_derivatives(dlm, -t, 1) + eval_U_derivatives(dlm, t, 1).T) == 0
    # central difference of U at an interior point
    e = mp.mpf(10) ** -10
    fd = (eval_U(dlm, t + e) - eval_U(dlm, t - e)) / (2 * e)
    assert prec.norm_fro(fd - eval_U_derivatives(dlm, t, 1)) < mp.mpf(10) ** -15
    with pytest.raises(ValueError):
        eval_U_derivatives(dlm, t, 3)


def test_algebraic_property(digits32, matrix_system):
    A0, A1, D, W, _ = matrix_system.mp_matrices()
    dlm = solve_delay_lyapunov(matrix_system)
    assert prec.norm_fro(dlm.P - D.T @ dlm.P @ D + W) < mp.mpf(10) ** -28


@pytest.mark.parametrize("seed", range(4))
def test_residuals_small(digits32, seed):
    s = random_system(np.random.default_rng(seed))
    res = residuals(solve_delay_lyapunov(s), points=40)
    assert all(v <= mp.mpf(10) ** -10 for v in res.values()), res


def test_theta_out_of_range(matrix_system):
    dlm = solve_delay_lyapunov(matrix_system)
    with pytest.raises(ValueError):
        eval_U(dlm, 1.0)


def test_lyapunov_condition_violated():
    # s = 0 is a root of s = -1 + e^{-s}; U does not exist
    s = scalar_system(-1.0, 1.0, 0.0, 1.0)
    assert lyapunov_condition_check(s).status == "violated"
    with pytest.raises(LyapunovMatrixError):
        solve_delay_lyapunov(s)


def test_lyapunov_condition_satisfied(example1):
    rep = lyapunov_condition_check(example1)
    assert rep.satisfied and rep.margin > 1e-3


def test_dump_csv(delay_free):
    dlm = solve_delay_lyapunov(delay_free)
    buf = io.StringIO()
    dump_U_csv(dlm, buf, 3)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "theta,U00"
    assert len(lines) == 4
    assert float(lines[-1].split(",")[1]) == pytest.approx(0.5 * np.exp(-1), rel=1e-14)
