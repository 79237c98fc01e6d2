"""Delay Lyapunov matrix by the semi-analytic (matrix exponential) method.

On ``[0, h]`` the pair ``Y(t) = U(t)``, ``Z(t) = U(t - h)`` solves the linear
ODE ``[vec Y; vec Z]' = L [vec Y; vec Z]`` obtained from the dynamic property
for positive and negative arguments.  ``U`` is therefore fixed by the initial
pair ``y0 = [vec U(0); vec U(-h)]``, which is found from linear boundary
conditions (continuity at zero, symmetry, the algebraic property).

Kronecker products follow the transposed-layout convention in which
``vec(A X B) = (A ⊗ B) vec(X)``; see :func:`pkron`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from mpmath import mp

from . import precision as prec
from .precision import mp_eye, mp_zeros
from .system import NeutralSystem, require_admissible


class LyapunovMatrixError(RuntimeError):
    """Lyapunov condition violated or the boundary system is numerically degenerate."""

    def __init__(self, message, sigma_min=None, sigma_max=None):
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max
        super().__init__(message)


def pkron(A, B):
    """Kronecker product with ``vec(A X B) = pkron(A, B) @ vec(X)``.

    Block ``(i, j)`` is ``B[j, i] * A``, i.e. ``numpy.kron(B.T, A)``.
    """
    return np.kron(np.asarray(B).T, np.asarray(A))


def vec(X):
    """Column-stacking vectorization."""
    return np.asarray(X).reshape(-1, order="F")


def unvec(v, n):
    return np.asarray(v).reshape((n, n), order="F")


def commutation(n):
    """Permutation ``K`` with ``K @ vec(X) = vec(X.T)``."""
    K = mp_zeros((n * n, n * n))
    for i in range(n):
        for j in range(n):
            K[i * n + j, j * n + i] = mp.one
    return K


@dataclass(frozen=True)
class PropagatorL:
    L: np.ndarray
    n: int
    det: object
    singular: bool


def build_L(system: NeutralSystem) -> PropagatorL:
    """Propagator of ``[vec U(t); vec U(t-h)]`` on ``[0, h]``.

    ``singular`` flags ``det(L) ≈ 0``.  ``U`` itself does not need ``L`` to be
    invertible, but the moment recursions do.
    """
    A0, A1, D, _, _ = system.mp_matrices()
    n = system.n
    I = mp_eye(n)
    lhs = np.block([[pkron(I, I), -pkron(I, D)],
                    [-pkron(D.T, I), pkron(I, I)]])
    rhs = np.block([[pkron(I, A0), pkron(I, A1)],
                    [-pkron(A1.T, I), -pkron(A0.T, I)]])
    try:
        L = prec.solve(lhs, rhs)
    except ZeroDivisionError:
        raise LyapunovMatrixError("leading block of L is singular (‖D‖ must be < 1)") from None
    det = prec.det(L)
    s = prec.singular_values(L)
    singular = bool(s[0] == 0 or s[-1] <= prec.default_tolerance() * s[0])
    return PropagatorL(L=L, n=n, det=det, singular=singular)


@dataclass(frozen=True, eq=False)
class DelayLyapunovMatrix:
    """Solved representation of ``U`` on ``[-h, h]``."""

    system: NeutralSystem
    n: int
    h: object
    L: PropagatorL
    y0: np.ndarray
    U0: np.ndarray
    Uh: np.ndarray
    Umh: np.ndarray
    dU0: np.ndarray   # U'(0+)
    P: np.ndarray
    digits: int
    boundary_sigma_min: object
    boundary_sigma_max: object
    residuals: dict = field(default_factory=dict)

    def state(self, theta):
        """``exp(theta L) y0`` for ``theta`` in ``[0, h]``."""
        theta = mp.mpf(theta)
        if theta == 0:
            return self.y0.copy()
        return prec.expm(self.L.L * theta) @ self.y0

    def float_L(self):
        return prec.to_float(self.L.L)

    def float_y0(self):
        return prec.to_float(self.y0)


def solve_delay_lyapunov(system: NeutralSystem, verify: bool = True) -> DelayLyapunovMatrix:
    """Solve the boundary value problem for ``y0 = [vec U(0); vec U(-h)]``.

    Conditions, stacked and solved in the least-squares sense:

    * ``U(0)`` from the right equals ``U(0)`` from the left: ``Y(0) = Z(h)``;
    * ``U(-h) = U(h)^T``: ``Z(0) = Y(h)^T``;
    * ``U(0) = U(0)^T``;
    * ``P - D^T P D = -W`` with ``P = U'(0+) - U'(0-) = Y'(0) - Z'(h)``.

    A rank check on the stacked matrix detects violation of the Lyapunov
    condition (no unique solution).
    """
    require_admissible(system)
    A0, A1, D, W, h = system.mp_matrices()
    n = system.n
    m = n * n
    prop = build_L(system)
    L = prop.L
    E = prec.expm(L * h)
    Im = mp_eye(m)
    Zm = mp_zeros((m, m))
    K = commutation(n)
    first = np.hstack([Im, Zm])
    second = np.hstack([Zm, Im])

    continuity = first - E[m:, :]
    symmetry_h = second - K @ E[:m, :]
    symmetry_0 = first - K @ first
    jump = L[:m, :] - (L @ E)[m:, :]              # vec P as a linear map of y0
    algebraic = (mp_eye(m) - pkron(D.T, D)) @ jump
    A = np.vstack([continuity, symmetry_h, symmetry_0, algebraic])
    b = np.concatenate([mp_zeros(3 * m), -vec(W)])

    s = prec.singular_values(A)
    smin, smax = s[-1], s[0]
    if smax == 0 or smin <= prec.default_tolerance() * smax:
        raise LyapunovMatrixError(
            "Lyapunov condition violated or numerically degenerate: boundary system "
            f"is rank deficient (sigma_min={mp.nstr(smin, 5)}, sigma_max={mp.nstr(smax, 5)}, "
            f"cond={mp.nstr(smax / smin, 5) if smin else 'inf'})",
            sigma_min=smin, sigma_max=smax)
    y0, _ = prec.lstsq(A, b)

    yh = E @ y0
    U0 = unvec(y0[:m], n)
    U0 = prec.symmetrize(U0)
    Umh = unvec(y0[m:], n)
    Uh = unvec(yh[:m], n)
    dU0 = unvec((L @ y0)[:m], n)
    P = dU0 + dU0.T
    dlm = DelayLyapunovMatrix(system=system, n=n, h=h, L=prop, y0=y0, U0=U0, Uh=Uh,
                              Umh=Umh, dU0=dU0, P=P, digits=prec.get_precision(),
                              boundary_sigma_min=smin, boundary_sigma_max=smax)
    if verify:
        dlm.residuals.update(residuals(dlm))
    return dlm


def _split(dlm: DelayLyapunovMatrix, s):
    m = dlm.n * dlm.n
    return unvec(s[:m], dlm.n), unvec(s[m:], dlm.n)


def _check_theta(dlm, theta):
    theta = mp.mpf(theta)
    slack = dlm.h * mp.mpf(10) ** (-(mp.dps - 2))
    if abs(theta) > dlm.h + slack:
        raise ValueError(f"theta={theta} outside [-h, h] with h={dlm.h}")
    return min(max(theta, -dlm.h), dlm.h)


def eval_U(dlm: DelayLyapunovMatrix, theta) -> np.ndarray:
    """``U(theta)`` for ``theta`` in ``[-h, h]``; negative arguments use ``U(-t) = U(t)^T``."""
    theta = _check_theta(dlm, theta)
    if theta < 0:
        return eval_U(dlm, -theta).T
    if theta == 0:
        return dlm.U0.copy()
    Y, _ = _split(dlm, dlm.state(theta))
    return Y


def eval_U_derivatives(dlm: DelayLyapunovMatrix, theta, order: int) -> np.ndarray:
    """``U'`` (order 1) or ``U''`` (order 2) at ``theta``.

    On ``[0, h]`` the value is the one-sided limit from inside ``(0, h)``;
    ``theta = 0`` therefore means ``0+``.  Negative arguments follow from the
    symmetry property: ``U'(t) = -U'(-t)^T`` and ``U''(t) = U''(-t)^T``.
    """
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    theta = _check_theta(dlm, theta)
    if theta < 0:
        val = eval_U_derivatives(dlm, -theta, order).T
        return -val if order == 1 else val
    s = dlm.state(theta)
    for _ in range(order):
        s = dlm.L.L @ s
    Y, _ = _split(dlm, s)
    return Y


def grid_states(dlm: DelayLyapunovMatrix, points: int, derivatives: int = 2):
    """States on ``points + 1`` uniform nodes ``0, h/points, ..., h``.

    Returns ``(thetas, [S0, S1, ...])`` where ``Sk`` holds ``L^k exp(t L) y0``
    row by row.  One exponential is formed and then applied repeatedly.
    """
    step = dlm.h / points
    Estep = prec.expm(dlm.L.L * step)
    L = dlm.L.L
    thetas = [step * k for k in range(points + 1)]
    states = [dlm.y0]
    for _ in range(points):
        states.append(Estep @ states[-1])
    out = [np.array(states, dtype=object)]
    for _ in range(derivatives):
        out.append(out[-1] @ L.T)
    return thetas, out


def residuals(dlm: DelayLyapunovMatrix, points: int = 100) -> dict:
    """Maxima of the defining-property residuals over a uniform grid.

    ``dynamic``           ‖U'(t) - U'(t-h) D - U(t) A0 - U(t-h) A1‖, t in [0, h]
    ``dynamic_negative``  ‖U'(s) - D^T U'(s+h) + A0^T U(s) + A1^T U(s+h)‖, s = t-h
    ``symmetry``          ‖U(t-h) - U(h-t)^T‖ with both sides from the exponential
    ``continuity``        ‖U(0) from the right - U(0) from the left‖
    ``algebraic``         ‖P - D^T P D + W‖
    """
    A0, A1, D, W, _ = dlm.system.mp_matrices()
    n = dlm.n
    _, (S, S1) = grid_states(dlm, points, derivatives=1)
    dyn = dyn_neg = sym = mp.zero
    for k in range(points + 1):
        Y, Z = _split(dlm, S[k])
        dY, dZ = _split(dlm, S1[k])
        dyn = max(dyn, prec.norm_fro(dY - dZ @ D - Y @ A0 - Z @ A1))
        dyn_neg = max(dyn_neg, prec.norm_fro(dZ - D.T @ dY + A0.T @ Z + A1.T @ Y))
        Yr, _ = _split(dlm, S[points - k])
        sym = max(sym, prec.norm_fro(Z - Yr.T))
    _, Zh = _split(dlm, S[points])
    cont = prec.norm_fro(unvec(dlm.y0[:n * n], n) - Zh)
    sym = max(sym, prec.norm_fro(unvec(dlm.y0[:n * n], n) - unvec(dlm.y0[:n * n], n).T))
    alg = prec.norm_fro(dlm.P - D.T @ dlm.P @ D + W)
    return {"dynamic": dyn, "dynamic_negative": dyn_neg, "symmetry": sym,
            "continuity": cont, "algebraic": alg}


@dataclass(frozen=True)
class LyapunovConditionReport:
    status: str                 # "satisfied" | "violated" | "inconclusive"
    margin: float
    roots_examined: list
    eps: float
    message: str = ""

    @property
    def satisfied(self) -> bool:
        return self.status == "satisfied"


def lyapunov_condition_check(system: NeutralSystem, eps: float = 1e-6,
                             region=None) -> LyapunovConditionReport:
    """Approximate check that no two characteristic roots sum to (nearly) zero.

    Only roots found inside a bounded rectangle are examined, so a
    ``satisfied`` outcome is a finite-region approximation of the spectral
    condition.  Pairs include a root with itself, which catches ``s = 0``.
    """
    from .oracle import RootFindingError, characteristic_roots

    try:
        rs = characteristic_roots(system, region=region)
    except RootFindingError as exc:
        return LyapunovConditionReport("inconclusive", float("nan"), [], eps, str(exc))
    roots = np.asarray(rs.roots, dtype=complex)
    if roots.size == 0:
        return LyapunovConditionReport("inconclusive", float("nan"), [], eps,
                                       "no characteristic roots found in region")
    sums = np.abs(roots[:, None] + roots[None, :])
    margin = float(sums.min())
    status = "satisfied" if margin > eps else "violated"
    return LyapunovConditionReport(status, margin, list(roots), eps)


def dump_U_csv(dlm: DelayLyapunovMatrix, path_or_file, points: int) -> None:
    """Write ``theta`` and the row-major entries of ``U(theta)`` on a uniform grid of [0, h]."""
    rows = u_grid_rows(dlm, points)
    n = dlm.n
    header = ["theta"] + [f"U{i}{j}" for i in range(n) for j in range(n)]
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)
    finally:
        if own:
            fh.close()


def u_grid_rows(dlm: DelayLyapunovMatrix, points: int) -> list[list[str]]:
    if points < 1:
        raise ValueError("points must be >= 1")
    if points == 1:
        thetas, states = [mp.zero], [dlm.y0]
    else:
        thetas, (S,) = grid_states(dlm, points - 1, derivatives=0)
        states = list(S)
    rows = []
    for t, s in zip(thetas, states):
        Y, _ = _split(dlm, s)
        rows.append([prec.to_decimal(t)] + [prec.to_decimal(x) for x in Y.reshape(-1)])
    return rows
