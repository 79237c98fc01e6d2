"""Monomial moments of the delay Lyapunov matrix and the criterion matrix P_N.

Moments (``k, i, j = 0..N-1``)::

    G_k    = ∫_{-h}^0 U(h+t) t^k dt          Gbar_k = ∫_{-h}^0 U(t) t^k dt
    H_ij   = ∫_{-h}^0 ∫_{-h}^{t1} t1^i t2^j U(t1-t2) dt2 dt1
    Hbar_ij= same with U(t1-t2-h)

are produced by linear recursions driven by ``L^{-1}`` (no quadrature).
The blocks of ``P_N`` are then closed-form combinations of the moments and of
``U(0)``, ``U(h)``.  The sign and term conventions below were derived by
integrating the defining double integrals by parts and are certified against
direct quadrature in :mod:`neutralstab.quadrature`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from mpmath import mp

from . import precision as prec
from .lyapunov import (DelayLyapunovMatrix, LyapunovMatrixError, solve_delay_lyapunov,
                       unvec, vec)
from .precision import mp_zeros
from .system import NeutralSystem


class RecursionUnavailableError(LyapunovMatrixError):
    """``det(L) = 0``: the moment recursions cannot be used."""


@dataclass(frozen=True, eq=False)
class MomentSet:
    N: int
    G: list
    Gbar: list
    H: list          # H[i][j]
    Hbar: list

    def restrict(self, N: int) -> "MomentSet":
        if N > self.N:
            raise ValueError(f"cannot restrict order {self.N} to {N}")
        return MomentSet(N, self.G[:N], self.Gbar[:N],
                         [row[:N] for row in self.H[:N]], [row[:N] for row in self.Hbar[:N]])


def _neg_h_powers(h, count):
    out = [mp.one]
    for _ in range(count - 1):
        out.append(out[-1] * (-h))
    return out


def _linv(dlm: DelayLyapunovMatrix):
    if dlm.L.singular:
        raise RecursionUnavailableError(
            "det(L) = 0: moment recursions unavailable (use the quadrature oracle)")
    return prec.inv(dlm.L.L)


def compute_G(dlm: DelayLyapunovMatrix, N: int):
    """``(G, Gbar)`` for ``k = 0..N-1``."""
    n, h = dlm.n, dlm.h
    m = n * n
    Linv = _linv(dlm)
    u0, umh, uh = vec(dlm.U0), vec(dlm.Umh), vec(dlm.Uh)
    pw = _neg_h_powers(h, max(N, 1))
    boundary = np.concatenate([u0, umh])
    g = Linv @ np.concatenate([uh - u0, u0 - umh])
    G, Gbar = [unvec(g[:m], n)], [unvec(g[m:], n)]
    for k in range(1, N):
        g = -(Linv @ (k * g + pw[k] * boundary))
        G.append(unvec(g[:m], n))
        Gbar.append(unvec(g[m:], n))
    return G[:N], Gbar[:N]


def compute_H(dlm: DelayLyapunovMatrix, G, Gbar, N: int):
    """``(H, Hbar)`` grids for ``i, j = 0..N-1``; the ``j = 0`` column has no ``H_{i,j-1}`` term."""
    n, h = dlm.n, dlm.h
    m = n * n
    Linv = _linv(dlm)
    boundary = np.concatenate([vec(dlm.U0), vec(dlm.Umh)])
    pw = _neg_h_powers(h, 2 * N + 1)
    H = [[None] * N for _ in range(N)]
    Hbar = [[None] * N for _ in range(N)]
    for i in range(N):
        gi = np.concatenate([vec(G[i]), vec(Gbar[i])])
        prev = None
        for j in range(N):
            p = i + j + 1
            rhs = (pw[p] / p) * boundary + pw[j] * gi
            if j > 0:
                rhs = rhs + j * prev
            x = Linv @ rhs
            H[i][j] = unvec(x[:m], n)
            Hbar[i][j] = unvec(x[m:], n)
            prev = x
    return H, Hbar


def compute_moments(dlm: DelayLyapunovMatrix, N: int) -> MomentSet:
    G, Gbar = compute_G(dlm, N)
    H, Hbar = compute_H(dlm, G, Gbar, N)
    return MomentSet(N, G, Gbar, H, Hbar)


def _blocks_to_matrix(blocks):
    return np.block([[b for b in row] for row in blocks])


def _he(blocks):
    """``He`` of a square block matrix given as nested lists: block ``(i,j) + (j,i)^T``."""
    N = len(blocks)
    return [[blocks[i][j] + blocks[j][i].T for j in range(N)] for i in range(N)]


@dataclass(frozen=True, eq=False)
class JBlocks:
    """Integral blocks of ``P_N``.

    ``J1`` and ``J2`` are ``n x nN``; the rest are ``nN x nN``.  ``J4`` is the
    symmetric part of its defining integral (only that part enters a
    quadratic form); ``J4_skew`` keeps the antisymmetric remainder for
    diagnostics.
    """
    N: int
    J0: np.ndarray
    J1: np.ndarray
    J2: np.ndarray
    J3: np.ndarray
    J4: np.ndarray
    J5: np.ndarray
    J6: np.ndarray
    J4_skew: np.ndarray

    def as_dict(self):
        return {k: getattr(self, k) for k in ("J0", "J1", "J2", "J3", "J4", "J5", "J6")}


def assemble_J(dlm: DelayLyapunovMatrix, moments: MomentSet, N: int | None = None) -> JBlocks:
    """Closed-form J blocks from the moment set.

    With ``c_p = (-h)^p / p`` and the first-derivative moment

        K_ij = ∫∫_{t2<t1} t1^i t2^j U'(t1-t2) = c_{i+j+1} U(0) + (-h)^j G_i + j H_{i,j-1},

    the blocks are (block row ``i``, column ``j``)::

        J1_k  = G_k^T A1
        J2_k  = (δ_k0 U(h)^T - (-h)^k U(0) - k G_{k-1}^T) D
        J3    = He{A1^T H_ij A1}
        J4    = sym{A1^T K_ij D - A1^T K_ji^T D}
        J5    = He{D^T R_ij D},  R_ij = c_{i+j+1} U'(0+) + δ_i0 (-h)^j U(h)
                                      - (-h)^{i+j} U(0) - i (-h)^j G_{i-1} + j K_{i,j-1}
        J6    = -c_{i+j+1} D^T P D
    """
    system = dlm.system
    N = moments.N if N is None else N
    if N > moments.N:
        raise ValueError(f"moments computed to order {moments.N}, need {N}")
    _, A1, D, _, h = system.mp_matrices()
    G, H = moments.G, moments.H
    U0, Uh, dU0, P = dlm.U0, dlm.Uh, dlm.dU0, dlm.P
    n = dlm.n
    pw = _neg_h_powers(h, 2 * N + 2)
    zero = mp_zeros((n, n))

    def c(p):
        return pw[p] / p

    def K(i, j):
        out = c(i + j + 1) * U0 + pw[j] * G[i]
        if j > 0:
            out = out + j * H[i][j - 1]
        return out

    J1 = np.hstack([G[k].T @ A1 for k in range(N)])
    J2_blocks = []
    for k in range(N):
        b = -pw[k] * U0
        if k == 0:
            b = b + Uh.T
        else:
            b = b - k * G[k - 1].T
        J2_blocks.append(b @ D)
    J2 = np.hstack(J2_blocks)

    Kmat = [[K(i, j) for j in range(N)] for i in range(N)]
    J3 = _blocks_to_matrix(_he([[A1.T @ H[i][j] @ A1 for j in range(N)] for i in range(N)]))
    J4_full = _blocks_to_matrix([[A1.T @ (Kmat[i][j] - Kmat[j][i].T) @ D for j in range(N)]
                                 for i in range(N)])
    J4 = prec.symmetrize(J4_full)
    J4_skew = (J4_full - J4_full.T) / 2

    def R(i, j):
        out = c(i + j + 1) * dU0 - pw[i + j] * U0
        if i == 0:
            out = out + pw[j] * Uh
        else:
            out = out - i * pw[j] * G[i - 1]
        if j > 0:
            out = out + j * Kmat[i][j - 1]
        return out

    J5 = _blocks_to_matrix(_he([[D.T @ R(i, j) @ D for j in range(N)] for i in range(N)]))
    DPD = D.T @ P @ D
    J6 = _blocks_to_matrix([[-c(i + j + 1) * DPD for j in range(N)] for i in range(N)])
    return JBlocks(N=N, J0=U0.copy(), J1=J1, J2=J2, J3=J3, J4=J4, J5=J5, J6=J6,
                   J4_skew=J4_skew if N else zero)


@dataclass(frozen=True, eq=False)
class CriterionMatrix:
    N: int
    P: np.ndarray
    blocks: JBlocks
    digits: int
    source: str = "recursion"       # or "quadrature" when det(L) = 0
    _lambda_min: list = field(default_factory=list, repr=False)

    @property
    def lambda_min(self):
        """Smallest eigenvalue of ``P`` (computed on first access)."""
        if not self._lambda_min:
            self._lambda_min.append(prec.eigvalsh(self.P)[0])
        return self._lambda_min[0]


def criterion_from_blocks(blocks: JBlocks) -> np.ndarray:
    """``[[J0, J1 - J2], [*, J3 + 2 J4 - J5 - J6]]``, exactly symmetric."""
    top = np.hstack([blocks.J0, blocks.J1 - blocks.J2])
    lower = blocks.J3 + 2 * blocks.J4 - blocks.J5 - blocks.J6
    bottom = np.hstack([(blocks.J1 - blocks.J2).T, lower])
    return prec.symmetrize(np.vstack([top, bottom]))


# ---------------------------------------------------------------------------
# caching pipeline

_DLM_CACHE: dict = {}
_MOMENT_CACHE: dict = {}


def clear_caches() -> None:
    _DLM_CACHE.clear()
    _MOMENT_CACHE.clear()


def delay_lyapunov_matrix(system: NeutralSystem) -> DelayLyapunovMatrix:
    """Cached :func:`solve_delay_lyapunov`, keyed on the system and the precision."""
    key = (system.key(), prec.get_precision())
    dlm = _DLM_CACHE.get(key)
    if dlm is None:
        dlm = solve_delay_lyapunov(system)
        _DLM_CACHE[key] = dlm
    return dlm


def moment_set(system: NeutralSystem, N: int) -> MomentSet:
    """Cached moments; a higher-order set is reused for lower orders."""
    key = (system.key(), prec.get_precision())
    ms = _MOMENT_CACHE.get(key)
    if ms is None or ms.N < N:
        ms = compute_moments(delay_lyapunov_matrix(system), N)
        _MOMENT_CACHE[key] = ms
    return ms.restrict(N)


def assemble_P(system: NeutralSystem, N: int) -> CriterionMatrix:
    """Full pipeline: ``U`` -> moments -> J blocks -> symmetric ``P_N``."""
    if N < 0:
        raise ValueError("N must be non-negative")
    dlm = delay_lyapunov_matrix(system)
    if N == 0:
        n = system.n
        empty = np.empty((n, 0), dtype=object)
        sq = np.empty((0, 0), dtype=object)
        blocks = JBlocks(0, dlm.U0.copy(), empty, empty, sq, sq, sq, sq, sq)
        source = "recursion"
    else:
        try:
            blocks = assemble_J(dlm, moment_set(system, N), N)
            source = "recursion"
        except RecursionUnavailableError:
            blocks = quadrature_blocks(dlm, N)
            source = "quadrature"
    return CriterionMatrix(N=N, P=criterion_from_blocks(blocks), blocks=blocks,
                           digits=prec.get_precision(), source=source)


def quadrature_blocks(dlm: DelayLyapunovMatrix, N: int, tol: float = 1e-11) -> JBlocks:
    """J blocks from adaptive quadrature (double precision); used when ``det(L) = 0``."""
    from .quadrature import quadrature_J

    J = quadrature_J(dlm, N, tol)
    mpJ = {k: prec.to_mp(v) for k, v in J.items()}
    skew = prec.to_mp((J["J4_full"] - J["J4_full"].T) / 2)
    return JBlocks(N=N, J0=dlm.U0.copy(), J1=mpJ["J1"], J2=mpJ["J2"], J3=prec.symmetrize(mpJ["J3"]),
                   J4=prec.symmetrize(mpJ["J4"]), J5=prec.symmetrize(mpJ["J5"]),
                   J6=prec.symmetrize(mpJ["J6"]), J4_skew=skew)


def dump_criterion_json(cm: CriterionMatrix, path) -> None:
    """Write ``P_N`` and all J blocks as decimal strings."""
    payload = {"N": cm.N, "precision_digits": cm.digits,
               "P": prec.to_decimal_strings(cm.P)}
    for k, v in cm.blocks.as_dict().items():
        payload[k] = prec.to_decimal_strings(v)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
