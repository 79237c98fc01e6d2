"""Direct quadrature of the defining integrals (independent check of the recursions).

Everything here runs in double precision with adaptive Gauss-Kronrod
(:func:`scipy.integrate.quad_vec`).  ``U`` and its derivatives are evaluated
from the solved exponential representation; the moment recursions are never
used.  Double integrals are split along ``t1 = t2`` so that each piece has a
smooth integrand (``U'`` jumps at zero).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
from scipy.integrate import quad_vec

from .lyapunov import DelayLyapunovMatrix


class QuadratureError(RuntimeError):
    def __init__(self, message, achieved=None):
        self.achieved = achieved
        super().__init__(message)


class FloatU:
    """Double-precision evaluator of ``U``, ``U'``, ``U''`` on ``[-h, h]``."""

    def __init__(self, dlm: DelayLyapunovMatrix):
        self.n = dlm.n
        self.h = float(dlm.h)
        self.L = dlm.float_L()
        self.y0 = dlm.float_y0()
        A0, A1, D, W, P = (np.asarray(x, dtype=float) for x in
                           (dlm.system.A0, dlm.system.A1, dlm.system.D, dlm.system.W,
                            dlm.P.astype(float)))
        self.A0, self.A1, self.D, self.W, self.P = A0, A1, D, W, P
        self.U0 = np.asarray(dlm.U0, dtype=float)

    def _state(self, t):
        return sla.expm(t * self.L) @ self.y0

    def _pos(self, t, order):
        s = self._state(t)
        for _ in range(order):
            s = self.L @ s
        return s[: self.n * self.n].reshape((self.n, self.n), order="F")

    def __call__(self, t, order=0):
        """``U^(order)(t)``; at ``t = 0`` derivatives are right-hand limits."""
        if t >= 0:
            return self._pos(t, order)
        v = self._pos(-t, order).T
        return -v if order == 1 else v


def _mono(t, N):
    return t ** np.arange(N)


def _check(res, err, tol, what):
    scale = max(np.max(np.abs(res)), 1e-300)
    if err > max(tol * scale, 1e-14 * scale):
        raise QuadratureError(f"{what}: tolerance not met (error estimate {err:.3e})", err)


def quadrature_J(dlm: DelayLyapunovMatrix, N: int, tol: float = 1e-11) -> dict:
    """Blocks ``J0..J6`` from their integral definitions.

    ``J4`` is returned twice: ``"J4_full"`` is the plain double integral over
    the square, ``"J4"`` its symmetric part (what a quadratic form sees).

    Blocks are integrated together, so a rough first pass estimates each
    block's size and the accurate pass integrates rescaled blocks; the error
    control then applies to every block relative to its own magnitude.
    A block whose integral is below ``1e-2 h^2`` times the largest integrand
    value (a block that cancels, or is zero up to round-off) is resolved to
    that absolute level instead; its integrand noise allows no better.
    """
    fu = FloatU(dlm)
    n, h = fu.n, fu.h
    A1, D, P = fu.A1, fu.D, fu.P
    I = np.eye(n)

    def theta_row(t):                     # Θ^T(t) = [I, tI, ..., t^{N-1} I]
        return np.kron(_mono(t, N)[None, :], I)

    def single(t):
        row = theta_row(t)
        j1 = fu(h + t).T @ A1 @ row
        j2 = fu(h + t, 1).T @ D @ row
        j6 = row.T @ D.T @ P @ D @ row
        return np.stack([np.pad(j1, ((0, n * N - n), (0, 0))),
                         np.pad(j2, ((0, n * N - n), (0, 0))), j6])

    def kernel(t1, t2, sign):
        s = t1 - t2
        if s == 0:
            s = sign * 1e-300
        outer = np.outer(_mono(t1, N), _mono(t2, N))
        U, dU, ddU = fu(s), fu(s, 1), fu(s, 2)
        return np.stack([np.kron(outer, A1.T @ U @ A1),
                         np.kron(outer, A1.T @ dU @ D),
                         np.kron(outer, D.T @ ddU @ D)])

    def integrate(eps, w1, w2, check=True):
        opts = dict(epsabs=0.0, epsrel=eps, norm="max", limit=400)
        res, err = quad_vec(lambda t: single(t) / w1, -h, 0.0, **opts)
        if check:
            _check(res, err, eps, "single integrals")

        inner_opts = dict(opts, epsrel=eps / 10)

        def inner(t1):
            total = 0.0
            # lower piece t2 < t1 (argument > 0) and upper piece t2 > t1 (argument < 0)
            for a, b, sign in ((-h, t1, 1.0), (t1, 0.0, -1.0)):
                if b - a <= 0:
                    continue
                r, e = quad_vec(lambda t2, sign=sign: kernel(t1, t2, sign) / w2, a, b,
                                **inner_opts)
                if check:
                    _check(r, e, eps, "inner integral")
                total = total + r
            return total

        res2, err2 = quad_vec(inner, -h, 0.0, **opts)
        if check:
            _check(res2, err2, eps, "double integrals")
        return res * w1, res2 * w2

    # weight = block size, floored at the round-off level of the largest integrand
    samples = np.linspace(-h, 0.0, 7)
    mag1 = np.max([np.abs(single(t)).max(axis=(1, 2)) for t in samples], axis=0)
    mag2 = np.max([np.abs(kernel(a, b, 1.0)).max(axis=(1, 2))
                   for a in samples for b in samples if a != b], axis=0)

    def weights(stack, mag):
        size = np.array([np.max(np.abs(b)) for b in stack])
        floor = max(1e-2 * h * h * mag.max(), 1e-300)
        return np.maximum(size, floor)[:, None, None]

    one = np.ones((3, 1, 1))
    rough1, rough2 = integrate(1e-4, one, one, check=False)
    res, res2 = integrate(tol, weights(rough1, mag1), weights(rough2, mag2))
    J1, J2, J6 = res[0][:n], res[1][:n], res[2]
    J3, J4_full, J5 = res2
    return {"J0": fu.U0, "J1": J1, "J2": J2, "J3": J3, "J4": (J4_full + J4_full.T) / 2,
            "J4_full": J4_full, "J5": J5, "J6": J6}


def triangle_integral(dlm: DelayLyapunovMatrix, i: int, j: int, upper: bool,
                      tol: float = 1e-12) -> np.ndarray:
    """``∫∫ t1^i t2^j U(t1-t2)`` over ``t2 < t1`` (``upper=False``) or ``t2 > t1``."""
    fu = FloatU(dlm)
    h = fu.h
    opts = dict(epsabs=0.0, epsrel=tol, norm="max")

    def inner(t1):
        a, b = ((t1, 0.0) if upper else (-h, t1))
        if b <= a:
            return np.zeros((fu.n, fu.n))
        return quad_vec(lambda t2: t1**i * t2**j * fu(t1 - t2), a, b, **opts)[0]

    return quad_vec(inner, -h, 0.0, **opts)[0]


def functional_value(dlm: DelayLyapunovMatrix, phi, tol: float = 1e-11) -> float:
    """``v0(phi)`` evaluated term by term from the Lyapunov-Krasovskii functional.

    ``phi`` maps ``t in [-h, 0]`` to an ``n``-vector.
    """
    fu = FloatU(dlm)
    n, h = fu.n, fu.h
    A1, D, P = fu.A1, fu.D, fu.P
    p = lambda t: np.asarray(phi(t), dtype=float).reshape(n)
    xi = p(0.0) - D @ p(-h)
    opts = dict(epsabs=0.0, epsrel=tol, norm="max", limit=400)

    value = xi @ fu.U0 @ xi
    lin, _ = quad_vec(lambda t: (fu(h + t).T @ A1 - fu(h + t, 1).T @ D) @ p(t), -h, 0.0, **opts)
    value += 2 * xi @ lin

    def inner(t1):
        total = 0.0
        pt1 = p(t1)
        for a, b, sign in ((-h, t1, 1.0), (t1, 0.0, -1.0)):
            if b - a <= 0:
                continue

            def f(t2, sign=sign):
                s = t1 - t2
                if s == 0:
                    s = sign * 1e-300
                ker = (A1.T @ fu(s) @ A1 + 2 * A1.T @ fu(s, 1) @ D - D.T @ fu(s, 2) @ D)
                return pt1 @ ker @ p(t2)
            total += quad_vec(f, a, b, **opts)[0]
        return total

    value += quad_vec(inner, -h, 0.0, **opts)[0]
    value -= quad_vec(lambda t: p(t) @ D.T @ P @ D @ p(t), -h, 0.0, **opts)[0]
    return float(value)
