"""PSD testing, sufficiency constants, the order N* and stability verdicts."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from mpmath import mp

from . import precision as prec
from .lyapunov import (DelayLyapunovMatrix, LyapunovConditionReport, LyapunovMatrixError,
                       grid_states, lyapunov_condition_check, unvec)
from .moments import CriterionMatrix, assemble_P, delay_lyapunov_matrix
from .system import NeutralSystem, growth_constants, require_admissible

STABLE, UNSTABLE, INCONCLUSIVE = "Stable", "Unstable", "Inconclusive"

GRID_POINTS = 1000
SAFETY = mp.mpf("1.05")
EIG_DIM_LIMIT = 64          # larger P_N get a double-precision λ_min estimate
QUADRATURE_TOL = mp.mpf("1e-9")   # PSD tolerance floor for quadrature-built P_N


# ---------------------------------------------------------------------------
# PSD test


@dataclass(frozen=True)
class PSDResult:
    is_psd: bool
    pivot: int | None            # 1-based step at which the factorization failed
    threshold: object            # tol * ‖M‖_F
    min_pivot: object            # smallest pivot accepted or the failing one
    rank: int                    # pivots above threshold
    order: tuple = ()            # pivot order (0-based row indices)

    @property
    def status(self) -> str:
        return "PSD" if self.is_psd else "NotPSD"


def psd_check(M, tol=None) -> PSDResult:
    """Pivoted Cholesky test for ``M >= 0`` up to ``tol * ‖M‖_F``.

    At each step the largest remaining diagonal entry is taken as pivot.  A
    pivot below ``-tol ‖M‖`` fails the test.  Once every remaining diagonal
    entry is within ``±tol ‖M‖`` the Schur complement is numerically zero on
    its diagonal; it is accepted only if its eigenvalues are also above the
    threshold (a zero diagonal with nonzero off-diagonal part is indefinite).
    """
    A = np.array(M, dtype=object) if np.asarray(M).dtype == object else prec.to_mp(M)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"psd_check needs a square matrix, got shape {A.shape}")
    n = A.shape[0]
    tol = prec.default_tolerance(slack=10) if tol is None else mp.mpf(tol)
    if n == 0:
        return PSDResult(True, None, mp.zero, mp.zero, 0)
    scale = prec.norm_fro(A)
    asym = prec.norm_fro(A - A.T)
    if asym > scale * mp.mpf(10) ** (-(mp.dps - 4)):
        raise ValueError(f"psd_check needs a symmetric matrix (‖M - M^T‖_F = {mp.nstr(asym, 5)})")
    tau = tol * scale
    S = prec.symmetrize(A)
    idx = list(range(n))
    min_piv = None
    for k in range(n):
        diag = [S[i, i] for i in range(k, n)]
        j = k + max(range(n - k), key=lambda t: diag[t])
        piv = S[j, j]
        if piv < -tau:
            return PSDResult(False, k + 1, tau, piv, k, tuple(idx))
        if piv <= tau:
            rest = S[k:, k:]
            lam = prec.eigvalsh(prec.symmetrize(rest))[0] if rest.shape[0] else mp.zero
            if lam < -tau:
                return PSDResult(False, k + 1, tau, lam, k, tuple(idx))
            return PSDResult(True, None, tau, piv if min_piv is None else min(min_piv, piv),
                             k, tuple(idx))
        if j != k:
            S[[k, j], :] = S[[j, k], :]
            S[:, [k, j]] = S[:, [j, k]]
            idx[k], idx[j] = idx[j], idx[k]
        min_piv = piv if min_piv is None else min(min_piv, piv)
        root = mp.sqrt(piv)
        col = S[k + 1:, k] / root
        S[k + 1:, k + 1:] = S[k + 1:, k + 1:] - np.outer(col, col)
    return PSDResult(True, None, tau, min_piv, n, tuple(idx))


# ---------------------------------------------------------------------------
# sufficiency constants, δ_N, Lambert W, N*


@dataclass(frozen=True)
class SufficiencyConstants:
    M1: object
    M2: object
    M3: object
    c1: object
    c2: object
    mu: object
    x: object                   # h r / 2
    a0: object
    r: object
    norm_D: object
    h: object
    n: int
    grid_points: int = GRID_POINTS
    safety: object = SAFETY

    def as_dict(self):
        keys = ("M1", "M2", "M3", "c1", "c2", "mu", "x", "a0", "r", "norm_D", "h")
        out = {k: prec.to_decimal(getattr(self, k)) for k in keys}
        out.update(grid_points=self.grid_points, safety=mp.nstr(self.safety, 6))
        return out


def _kernel_sups(dlm: DelayLyapunovMatrix, points: int):
    _, A1, D, _, _ = dlm.system.mp_matrices()
    n = dlm.n
    m = n * n
    _, (S, S1, S2) = grid_states(dlm, points, derivatives=2)
    m1 = m2 = mp.zero
    for k in range(points + 1):
        # (U(t), U(t-h)) and their derivatives, t in [0, h]
        U, dU, ddU = (unvec(X[k][:m], n) for X in (S, S1, S2))
        Um, dUm, ddUm = (unvec(X[k][m:], n) for X in (S, S1, S2))
        m1 = max(m1, prec.norm2(U.T @ A1 - dU.T @ D))
        for V, dV, ddV in ((U, dU, ddU), (Um, dUm, ddUm)):
            m2 = max(m2, prec.norm2(A1.T @ V @ A1 + 2 * A1.T @ dV @ D - D.T @ ddV @ D))
    return m1, m2


def sufficiency_constants(system: NeutralSystem, dlm: DelayLyapunovMatrix | None = None,
                          points: int = GRID_POINTS, safety=SAFETY) -> SufficiencyConstants:
    """Grid estimates of ``M1, M2`` (times ``safety``), exact ``M3``, then ``c1, c2, mu``.

    ``M2`` is taken over arguments in ``(-h, h)``: the double-integral kernel
    is evaluated at ``t1 - t2`` of either sign and its norm is not even in
    the argument.
    """
    dlm = delay_lyapunov_matrix(system) if dlm is None else dlm
    g = growth_constants(system)
    _, _, D, _, h = system.mp_matrices()
    m1, m2 = _kernel_sups(dlm, points)
    safety = mp.mpf(safety)
    M1, M2 = safety * m1, safety * m2
    M3 = prec.norm2(D.T @ dlm.P @ D)
    nD = g.norm_D
    c1 = h * ((1 + nD) * M1 + h * M2 + M3)
    c2 = h * (h * M2 + M3)
    x = h * g.r / 2
    mu = max(x, x * x)
    return SufficiencyConstants(M1=M1, M2=M2, M3=M3, c1=c1, c2=c2, mu=mu, x=x, a0=g.a0, r=g.r,
                                norm_D=nD, h=h, n=system.n, grid_points=points,
                                safety=safety)


def delta_N(constants: SufficiencyConstants, N: int, mu=None):
    """``(8 c1 + 16 c2) mu^N / N!`` (mpmath numbers do not overflow)."""
    if N < 0:
        raise ValueError("N must be non-negative")
    mu = constants.mu if mu is None else mu
    C = 8 * constants.c1 + 16 * constants.c2
    if C == 0:
        return mp.zero
    return C * mp.power(mu, N) / mp.factorial(N)


def linear_rate_valid(constants: SufficiencyConstants, N: int) -> bool:
    """Whether ``mu = hr/2`` gives a valid bound at order ``N``.

    With ``e_N = 4 x^N / N!`` (``x = hr/2``) the functional error obeys
    ``|Y_N| <= 2 c1 e_N + c2 e_N^2``.  If ``x^N / N! <= 1`` then
    ``c2 e_N^2 <= 16 c2 x^N / N!`` and the bound ``(8c1 + 16c2) x^N / N!``
    holds without squaring ``x``.
    """
    return mp.power(constants.x, N) / mp.factorial(N) <= 1


def effective_mu(constants: SufficiencyConstants, N: int, rule: str = "refined"):
    """Rate used in ``delta_N`` at order ``N`` under ``rule`` ("refined" or "max")."""
    if rule == "max":
        return constants.mu
    if rule != "refined":
        raise ValueError(f"unknown rule {rule!r}")
    return constants.x if linear_rate_valid(constants, N) else constants.mu


def lambert_w(z):
    """Principal branch of ``W`` on ``z >= 0`` at working precision."""
    z = mp.mpf(z)
    if z < 0:
        raise ValueError("lambert_w is only provided for z >= 0")
    return mp.re(mp.lambertw(z))


def n_star_formula(constants: SufficiencyConstants, mu) -> int:
    """``ceil(mu exp(1 + W(log((8c1 + 16c2)/a0) / (e mu))))``.

    Returns 1 when the bound is already below ``a0`` at ``N = 0``
    (``(8c1 + 16c2)/a0 < 1``) and in the degenerate cases ``c1 = c2 = 0`` or
    ``mu = 0``.
    """
    C = 8 * constants.c1 + 16 * constants.c2
    if C == 0 or mu == 0:
        return 1
    ratio = C / constants.a0
    if ratio < 1:
        return 1
    w = lambert_w(mp.log(ratio) / (mp.e * mu))
    return int(mp.ceil(mu * mp.exp(1 + w)))


def compute_N_star(constants: SufficiencyConstants, rule: str = "refined") -> int:
    """Certified order ``N*``.

    ``rule="max"`` uses ``mu = max(hr/2, (hr/2)^2)`` throughout.  The default
    ``"refined"`` first tries ``mu = hr/2`` and keeps the result only if
    :func:`linear_rate_valid` holds there (then it holds for every larger
    order too, since ``x^N/N!`` decreases for ``N > x`` and the order found
    exceeds ``e x``); otherwise it falls back to ``"max"``.
    """
    if rule == "max":
        return n_star_formula(constants, constants.mu)
    if rule != "refined":
        raise ValueError(f"unknown rule {rule!r}")
    N = n_star_formula(constants, constants.x)
    if N > constants.x and linear_rate_valid(constants, N):
        return N
    return n_star_formula(constants, constants.mu)


# ---------------------------------------------------------------------------
# tests and verdicts


@dataclass(frozen=True)
class TestOutcome:
    N: int
    passed: bool
    psd: PSDResult
    lambda_min: object
    shift: object = None        # δ_N/(1-‖D‖)^2 for the sufficient test


def _lambda_min(cm: CriterionMatrix):
    if cm.P.shape[0] <= EIG_DIM_LIMIT:
        return cm.lambda_min, "working precision"
    vals = np.linalg.eigvalsh(prec.to_float(cm.P))
    return mp.mpf(float(vals[0])), "double precision"


def _tol_for(cm: CriterionMatrix, tol):
    if cm.source != "quadrature":
        return tol
    base = prec.default_tolerance(slack=10) if tol is None else mp.mpf(tol)
    return max(base, QUADRATURE_TOL)


def necessary_test(system: NeutralSystem, N: int, tol=None, cm: CriterionMatrix | None = None
                   ) -> TestOutcome:
    """PSD test of ``P_N``; a failure certifies instability."""
    cm = assemble_P(system, N) if cm is None else cm
    res = psd_check(cm.P, _tol_for(cm, tol))
    return TestOutcome(N, res.is_psd, res, None)


def sufficient_test(system: NeutralSystem, N: int, constants: SufficiencyConstants | None = None,
                    tol=None, cm: CriterionMatrix | None = None, rule: str = "refined"
                    ) -> TestOutcome:
    """PSD test of ``P_N - X_N``; a pass certifies exponential stability."""
    constants = sufficiency_constants(system) if constants is None else constants
    cm = assemble_P(system, N) if cm is None else cm
    mu = effective_mu(constants, N, rule)
    shift = delta_N(constants, N, mu) / (1 - constants.norm_D) ** 2
    Q = cm.P.copy()
    for i in range(system.n):
        Q[i, i] = Q[i, i] - shift
    res = psd_check(Q, _tol_for(cm, tol))
    return TestOutcome(N, res.is_psd, res, None, shift)


TRUST_REL = mp.mpf("1e-8")


@dataclass(frozen=True)
class PrecisionCheck:
    ok: bool
    error: object          # max |P_N(d) - P_N(d + guard)|
    threshold: object      # TRUST_REL * ‖P_N‖_F
    guard_digits: int
    digits_needed: int     # estimate of the working precision that would pass
    same_outcome: bool


def precision_check(system: NeutralSystem, N: int, cm: CriterionMatrix, tol=None,
                    guard: int | None = None) -> PrecisionCheck:
    """Compare ``P_N`` with a recomputation carrying ``guard`` extra digits.

    The moment recursions are forward unstable: each order costs roughly
    ``log10(k / (h |lambda(L)|))`` digits, so ``P_N`` at the working
    precision can be meaningless.  It is trusted when

    * the entrywise discrepancy to the guarded copy is at most
      ``1e-8 ‖P_N‖_F``, and
    * both copies give the same PSD outcome (and failing pivot) under the
      same absolute threshold.
    """
    d = prec.get_precision()
    guard = max(10, d // 2) if guard is None else guard
    if cm.source == "quadrature":
        # double-precision quadrature: accuracy is set by its own tolerance
        return PrecisionCheck(True, mp.nan, QUADRATURE_TOL * prec.norm_fro(cm.P), 0, d, True)
    res = psd_check(cm.P, tol)
    with prec.precision(d + guard):
        ref = assemble_P(system, N).P
        err = max((abs(a - b) for a, b in zip(cm.P.reshape(-1), ref.reshape(-1))),
                  default=mp.zero)
        limit = TRUST_REL * prec.norm_fro(ref)
        scale = prec.norm_fro(ref)
        res_ref = psd_check(ref, res.threshold / scale if scale else tol)
        same = res_ref.is_psd == res.is_psd and res_ref.pivot == res.pivot
        small = bool(err <= limit)
        if small and same:
            need = d
        elif small:
            need = d + guard
        else:
            need = d + int(mp.ceil(mp.log10(err / limit))) + 10
    return PrecisionCheck(small and same, err, limit, guard, need, same)


@dataclass
class StabilityReport:
    verdict: str
    N_used: int | None
    N_star: int | None
    lambda_min_PN: object = None
    lambda_min_method: str = ""
    constants: SufficiencyConstants | None = None
    lyapunov_condition: LyapunovConditionReport | None = None
    residuals: dict = field(default_factory=dict)
    precision_digits: int = 0
    wall_time: float = 0.0
    delta_N_star: object = None
    rule: str = "refined"
    psd: PSDResult | None = None
    ladder: list = field(default_factory=list)      # (N, passed)
    certified: bool | None = None
    precision: PrecisionCheck | None = None
    message: str = ""

    def to_dict(self) -> dict:
        def s(x):
            if x is None:
                return None
            if isinstance(x, (mp.mpf, mp.mpc)):
                return prec.to_decimal(x)
            return x

        lc = self.lyapunov_condition
        pc = self.precision
        return {
            "verdict": self.verdict,
            "N_used": self.N_used,
            "N_star": self.N_star,
            "N_star_rule": self.rule,
            "lambda_min_PN": s(self.lambda_min_PN),
            "lambda_min_method": self.lambda_min_method,
            "delta_N_star": s(self.delta_N_star),
            "certified": self.certified,
            "psd": None if self.psd is None else {
                "status": self.psd.status, "pivot": self.psd.pivot,
                "threshold": s(self.psd.threshold), "min_pivot": s(self.psd.min_pivot),
                "rank": self.psd.rank},
            "ladder": [{"N": n, "passed": p} for n, p in self.ladder],
            "constants": None if self.constants is None else self.constants.as_dict(),
            "lyapunov_condition": None if lc is None else {
                "status": lc.status, "margin": repr(float(lc.margin)), "eps": repr(lc.eps),
                "roots_examined": len(lc.roots_examined), "message": lc.message},
            "residuals": {k: s(v) for k, v in self.residuals.items()},
            "precision_digits": self.precision_digits,
            "precision_check": None if pc is None else {
                "ok": pc.ok, "error": s(pc.error), "threshold": s(pc.threshold),
                "same_outcome": pc.same_outcome, "guard_digits": pc.guard_digits,
                "digits_needed": pc.digits_needed},
            "wall_time_s": round(self.wall_time, 3),
            "message": self.message,
        }

    def to_json(self, **kw) -> str:
        kw.setdefault("indent", 1)
        return json.dumps(self.to_dict(), **kw)


def _ladder_orders(target: int):
    N = 2
    while N < target:
        yield N
        N *= 2


def full_test(system: NeutralSystem, order: int | None = None, max_order: int | None = None,
              tol=None, ladder: bool = True, region=None, rule: str = "refined",
              verify_precision: bool = True, auto_precision: bool = False,
              max_digits: int = 600) -> StabilityReport:
    """Decide exponential stability.

    Steps: Lyapunov condition (root oracle), ``U``, constants, ``N*``, then
    the PSD test of ``P_N`` at ``N = N*`` (or ``order`` when given, capped by
    ``max_order``).  With ``ladder`` set, ``P_2, P_4, ...`` below the target
    are tried first and the first failure ends the run with Unstable.

    When the tested order is below ``N*`` a pass is not enough for
    Stable: the shifted (sufficient) test must also pass, otherwise the
    verdict is Inconclusive.

    With ``verify_precision`` every decisive ``P_N`` is compared against a
    recomputation with guard digits (:func:`precision_check`); if they differ
    by more than the PSD threshold the verdict is Inconclusive.  With
    ``auto_precision`` the working precision is raised to the estimate
    reported by that check and the test is rerun, up to ``max_digits``.
    """
    if not auto_precision:
        return _full_test(system, order, max_order, tol, ladder, region, rule, verify_precision)
    t0 = time.perf_counter()
    d = prec.get_precision()
    while True:
        with prec.precision(d):
            rep = _full_test(system, order, max_order, tol, ladder, region, rule, True)
        pc = rep.precision
        if pc is None or pc.ok or d >= max_digits:
            break
        d = min(max(pc.digits_needed, d + 8), max_digits)
    rep.wall_time = time.perf_counter() - t0
    return rep


def _full_test(system, order, max_order, tol, ladder, region, rule, verify_precision):
    t0 = time.perf_counter()
    require_admissible(system)
    rep = StabilityReport(INCONCLUSIVE, None, None, precision_digits=prec.get_precision(),
                          rule=rule)

    def done(verdict, message=""):
        rep.verdict = verdict
        rep.message = message
        rep.wall_time = time.perf_counter() - t0
        return rep

    def trusted(N, cm):
        if not verify_precision:
            return True
        rep.precision = precision_check(system, N, cm, tol)
        return rep.precision.ok

    def untrusted(N):
        pc = rep.precision
        why = ("the PSD outcome changes" if pc.error <= pc.threshold else
               f"entries move by {mp.nstr(pc.error, 3)} (limit {mp.nstr(pc.threshold, 3)})")
        return done(INCONCLUSIVE, f"P_{N} is not reliable at {prec.get_precision()} digits: "
                                  f"with {pc.guard_digits} guard digits {why}; about "
                                  f"{pc.digits_needed} digits are needed")

    lc = lyapunov_condition_check(system, region=region)
    rep.lyapunov_condition = lc
    if lc.status == "violated":
        return done(UNSTABLE, "Lyapunov condition violated: roots s and -s both present, "
                              "so some root has Re s >= 0")
    if lc.status != "satisfied":
        return done(INCONCLUSIVE, f"Lyapunov condition check inconclusive: {lc.message}")

    try:
        dlm = delay_lyapunov_matrix(system)
    except LyapunovMatrixError as exc:
        return done(INCONCLUSIVE, f"delay Lyapunov matrix unavailable: {exc}")
    rep.residuals = dict(dlm.residuals)

    constants = sufficiency_constants(system, dlm)
    rep.constants = constants
    N_star = compute_N_star(constants, rule)
    rep.N_star = N_star
    rep.delta_N_star = delta_N(constants, N_star, effective_mu(constants, N_star, rule))

    target = N_star if order is None else int(order)
    if max_order is not None:
        target = min(target, int(max_order))
    if target < 1:
        raise ValueError("tested order must be >= 1")

    if ladder:
        for N in _ladder_orders(target):
            cm = assemble_P(system, N)
            out = necessary_test(system, N, tol, cm=cm)
            rep.ladder.append((N, out.passed))
            if not out.passed:
                rep.N_used, rep.psd = N, out.psd
                rep.lambda_min_PN, rep.lambda_min_method = _lambda_min(cm)
                if not trusted(N, cm):
                    return untrusted(N)
                return done(UNSTABLE, f"P_{N} is not positive semidefinite (necessity)")

    cm = assemble_P(system, target)
    out = necessary_test(system, target, tol, cm=cm)
    rep.N_used, rep.psd = target, out.psd
    rep.lambda_min_PN, rep.lambda_min_method = _lambda_min(cm)
    if not trusted(target, cm):
        return untrusted(target)
    if not out.passed:
        return done(UNSTABLE, f"P_{target} is not positive semidefinite (necessity)")
    if target >= N_star:
        return done(STABLE, f"P_{target} is positive semidefinite with N >= N* = {N_star}"
                    + (" (quadrature fallback, det L = 0)" if cm.source == "quadrature" else ""))
    suff = sufficient_test(system, target, constants, tol, cm=cm, rule=rule)
    rep.certified = suff.passed
    if suff.passed:
        return done(STABLE, f"P_{target} - X_{target} is positive semidefinite (sufficiency)")
    return done(INCONCLUSIVE, f"P_{target} passed but N = {target} < N* = {N_star} and the "
                              "shifted test did not certify stability")
