import numpy as np
import pytest
from mpmath import mp

from neutralstab import precision as prec


def test_set_and_get():
    prec.set_precision(40)
    assert prec.get_precision() == 40
    assert mp.dps == 40


def test_rejects_tiny_precision():
    with pytest.raises(ValueError):
        prec.set_precision(2)


def test_context_restores():
    prec.set_precision(20)
    with prec.precision(50):
        assert mp.dps == 50
    assert mp.dps == 20


def test_context_restores_on_error():
    prec.set_precision(20)
    with pytest.raises(RuntimeError):
        with prec.precision(60):
            raise RuntimeError
    assert mp.dps == 20


def test_default_tolerance():
    with prec.precision(32):
        assert prec.default_tolerance(slack=10) == mp.mpf(10) ** -22
    assert prec.default_tolerance(20, slack=6) == mp.mpf(10) ** -14


def test_float_conversion_is_exact():
    with prec.precision(40):
        a = prec.to_mp([[0.1]])
        assert a[0, 0] == mp.mpf(0.1)
        assert a[0, 0] != mp.mpf("0.1")


def test_solve_and_inverse(digits32):
    A = prec.to_mp([[4.0, 1.0], [2.0, 3.0]])
    b = prec.to_mp([1.0, 2.0])
    x = prec.solve(A, b)
    assert prec.norm_fro(A @ x - b) < mp.mpf(10) ** -30
    assert prec.norm_fro(A @ prec.inv(A) - prec.mp_eye(2)) < mp.mpf(10) ** -30
    assert abs(prec.det(A) - 10) < mp.mpf(10) ** -30


def test_eigvalsh_sorted(digits32):
    A = prec.to_mp([[2.0, 1.0], [1.0, 2.0]])
    ev = prec.eigvalsh(A)
    assert abs(ev[0] - 1) < mp.mpf(10) ** -30
    assert abs(ev[1] - 3) < mp.mpf(10) ** -30


def test_norm2_matches_numpy():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert float(prec.norm2(prec.to_mp(A))) == pytest.approx(np.linalg.norm(A, 2), rel=1e-14)


def test_expm_matches_scipy():
    import scipy.linalg as sla
    A = np.array([[-1.0, 2.0], [0.5, -3.0]])
    assert np.allclose(prec.to_float(prec.expm(prec.to_mp(A))), sla.expm(A), rtol=1e-13)


def test_decimal_strings_keep_digits():
    with prec.precision(30):
        out = prec.to_decimal_strings(prec.to_mp([[1.0]]) / 3)
        assert out[0][0].startswith("0.33333333333333333333333")
