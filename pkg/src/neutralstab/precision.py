"""Process-wide working precision and small dense linear algebra helpers.

All matrices handled by the Lyapunov-matrix, moment and stability code are
numpy ``object`` arrays of :class:`mpmath.mpf`.  numpy supplies the indexing,
``kron``, transposes and ``@``; mpmath supplies the arithmetic and the few
factorizations we need (LU, QR, SVD, symmetric eigenvalues, ``expm``).

The precision lives in mpmath's global context, so a change applies to every
subsequent computation in the process.  Mixing precisions inside one analysis
is not supported; caches are keyed on :func:`get_precision`.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import mpmath
import numpy as np
from mpmath import mp
from mpmath.libmp import repr_dps

DEFAULT_DIGITS = 16
ENV_VAR = "NEUTRAL_STAB_PRECISION"


def set_precision(digits: int) -> None:
    """Set the working precision in significant decimal digits."""
    digits = int(digits)
    if digits < 4:
        raise ValueError(f"precision must be at least 4 digits, got {digits}")
    mp.dps = digits


def get_precision() -> int:
    return mp.dps


@contextmanager
def precision(digits: int):
    """Temporarily switch the process-wide precision."""
    old = mp.dps
    set_precision(digits)
    try:
        yield
    finally:
        mp.dps = old


def default_tolerance(digits: int | None = None, slack: int = 6) -> mpmath.mpf:
    """``10**-(digits - slack)``, the residual tolerance used throughout."""
    digits = get_precision() if digits is None else digits
    return mp.mpf(10) ** (-(digits - slack))


# ---------------------------------------------------------------------------
# conversions


def _to_mpf(x):
    if isinstance(x, mpmath.mpf):
        return +x
    if isinstance(x, (float, np.floating)):
        return mp.mpf(float(x))
    if isinstance(x, (mpmath.mpc, complex, np.complexfloating)):
        raise TypeError("complex values are not supported here")
    return mp.mpf(x)


_vec_to_mpf = np.frompyfunc(_to_mpf, 1, 1)


def to_mp(a) -> np.ndarray:
    """Convert array-like input (floats, ints, decimal strings) to an mpf array."""
    arr = np.asarray(a, dtype=object)
    if arr.ndim == 0:
        return np.array(_to_mpf(arr.item()), dtype=object)
    return _vec_to_mpf(arr).astype(object)


def to_float(a) -> np.ndarray:
    return np.asarray(a, dtype=object).astype(float)


def mp_eye(n: int) -> np.ndarray:
    out = np.full((n, n), mp.zero, dtype=object)
    for i in range(n):
        out[i, i] = mp.one
    return out


def mp_zeros(shape) -> np.ndarray:
    return np.full(shape, mp.zero, dtype=object)


def _as_matrix(a: np.ndarray) -> mpmath.matrix:
    return mp.matrix(np.asarray(a, dtype=object).tolist())


def _from_matrix(m: mpmath.matrix) -> np.ndarray:
    return np.array(m.tolist(), dtype=object)


# ---------------------------------------------------------------------------
# linear algebra


def solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a x = b`` by LU at working precision; ``b`` may be a matrix."""
    A = _as_matrix(a)
    b = np.asarray(b, dtype=object)
    if b.ndim == 1:
        return _from_matrix(mp.lu_solve(A, mp.matrix(b.tolist()))).reshape(-1)
    cols = [_from_matrix(mp.lu_solve(A, mp.matrix(b[:, j].tolist()))).reshape(-1)
            for j in range(b.shape[1])]
    return np.stack(cols, axis=1)


def inv(a: np.ndarray) -> np.ndarray:
    return _from_matrix(mp.inverse(_as_matrix(a)))


def det(a: np.ndarray):
    return mp.det(_as_matrix(a))


def lstsq(a: np.ndarray, b: np.ndarray):
    """Least-squares solution via Householder QR; returns ``(x, residual_norm)``."""
    x, res = mp.qr_solve(_as_matrix(a), mp.matrix(np.asarray(b, dtype=object).tolist()))
    return _from_matrix(x).reshape(-1), res


def singular_values(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=object)
    if a.shape == (1, 1):
        return np.array([abs(a[0, 0])], dtype=object)
    s = mp.svd_r(_as_matrix(a), compute_uv=False)
    return np.array(sorted((s[i] for i in range(len(s))), reverse=True), dtype=object)


def norm2(a: np.ndarray):
    """Spectral norm.  Closed forms for 1x1 and 2x2, SVD otherwise."""
    a = np.asarray(a, dtype=object)
    if a.shape == (1, 1):
        return abs(a[0, 0])
    if a.shape == (2, 2):
        fro2 = sum(x * x for x in a.flat)
        d = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        disc = fro2 * fro2 - 4 * d * d
        if disc < 0:
            disc = mp.zero
        return mp.sqrt((fro2 + mp.sqrt(disc)) / 2)
    return singular_values(a)[0]


def norm_fro(a: np.ndarray):
    return mp.sqrt(sum(x * x for x in np.asarray(a, dtype=object).flat))


def eigvalsh(a: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, ascending."""
    a = np.asarray(a, dtype=object)
    if a.shape == (1, 1):
        return np.array([a[0, 0]], dtype=object)
    e = mp.eigsy(_as_matrix(a), eigvals_only=True)
    return np.array(sorted(e[i] for i in range(len(e))), dtype=object)


def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential (scaling and squaring with a Pade approximant)."""
    return _from_matrix(mp.expm(_as_matrix(a), method="pade"))


def symmetrize(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2


def to_decimal(x) -> str:
    """Decimal string that reads back to the same binary value."""
    return mp.nstr(x, repr_dps(mp.prec))


def to_decimal_strings(a) -> list:
    """Nested lists of decimal strings that read back to the same binary value."""
    arr = np.asarray(a, dtype=object)
    if arr.ndim == 0:
        return to_decimal(arr.item())
    return [to_decimal_strings(x) for x in arr]


def _init_from_env() -> None:
    value = os.environ.get(ENV_VAR)
    set_precision(int(value) if value else DEFAULT_DIGITS)


_init_from_env()
