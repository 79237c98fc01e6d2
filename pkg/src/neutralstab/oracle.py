"""Independent ground truth: characteristic roots, time simulation, D-subdivision.

Nothing here uses the delay Lyapunov matrix.  Roots come from Chebyshev
collocation of the infinitesimal generator, polished by Newton iteration on

    det(s I - A0 - s e^{-sh} D - e^{-sh} A1) = 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from mpmath import mp

from .system import NeutralSystem, growth_constants


MARGINAL = 1e-10


class RootFindingError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


# ---------------------------------------------------------------------------
# characteristic roots


@dataclass(frozen=True)
class Region:
    re_min: float
    re_max: float
    im_min: float
    im_max: float

    def contains(self, s: complex, pad: float = 0.0) -> bool:
        return (self.re_min - pad <= s.real <= self.re_max + pad
                and self.im_min - pad <= s.imag <= self.im_max + pad)

    @classmethod
    def square(cls, R: float) -> "Region":
        return cls(-R, R, -R, R)


@dataclass(frozen=True)
class RootSet:
    roots: list                 # sorted by decreasing real part
    region: Region
    nodes: int                  # collocation nodes at convergence
    tol: float                  # Newton step tolerance (relative)
    residuals: list = field(default_factory=list)   # |det Δ(s)| at 30 digits

    @property
    def abscissa(self) -> float:
        """Largest real part among the roots found (``-inf`` if none)."""
        return max((s.real for s in self.roots), default=-math.inf)

    @property
    def verdict(self) -> str:
        """Stable iff every root found has ``Re s < -margin`` (roots on the axis are not)."""
        return "Stable" if self.abscissa < -MARGINAL else "Unstable"


def default_region(system: NeutralSystem) -> Region:
    """Square containing every root with ``Re s >= 0`` together with its mirror ``-s``.

    From ``s (I - e^{-sh} D) v = (A0 + e^{-sh} A1) v`` and ``|e^{-sh}| <= 1``
    for ``Re s >= 0`` one gets ``|s| <= r``, so the square of half-width
    ``r`` is enough both for stability and for the Lyapunov condition.
    """
    r = float(growth_constants(system).r)
    R = 1.05 * r + 0.5
    return Region.square(R)


def cheb_diff(M: int):
    """Trefethen's Chebyshev differentiation matrix on ``x_j = cos(j pi / M)``."""
    if M == 0:
        return np.zeros((1, 1)), np.ones(1)
    x = np.cos(np.pi * np.arange(M + 1) / M)
    c = np.ones(M + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(M + 1)
    X = np.tile(x, (M + 1, 1)).T
    dX = X - X.T
    Dm = np.outer(c, 1.0 / c) / (dX + np.eye(M + 1))
    Dm -= np.diag(Dm.sum(axis=1))
    return Dm, x


def collocation_eigenvalues(system: NeutralSystem, M: int) -> np.ndarray:
    """Eigenvalues of the collocated generator with ``M + 1`` nodes on ``[-h, 0]``.

    The first block row imposes ``s (phi(0) - D phi(-h)) = A0 phi(0) + A1 phi(-h)``,
    the others ``s phi(theta_j) = phi'(theta_j)``.
    """
    n, h = system.n, system.h
    Dm, _ = cheb_diff(M)
    Dm = Dm * (2.0 / h)                 # node 0 is theta = 0, node M is theta = -h
    size = n * (M + 1)
    A = np.kron(Dm, np.eye(n))
    B = np.eye(size)
    A[:n, :] = 0.0
    A[:n, :n] = system.A0
    A[:n, M * n:] = system.A1
    B[:n, M * n:] = -system.D
    try:
        vals = sla.eigvals(A, B)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RootFindingError(f"collocation eigenproblem failed: {exc}", {"nodes": M}) from None
    return vals[np.isfinite(vals)]


def char_matrix(system: NeutralSystem, s: complex):
    e = np.exp(-s * system.h)
    I = np.eye(system.n)
    Delta = s * I - system.A0 - s * e * system.D - e * system.A1
    dDelta = I - e * system.D + s * system.h * e * system.D + system.h * e * system.A1
    return Delta, dDelta


def char_det(system: NeutralSystem, s: complex) -> complex:
    return complex(np.linalg.det(char_matrix(system, s)[0]))


def _newton(system: NeutralSystem, s: complex, tol: float, maxit: int = 60):
    for _ in range(maxit):
        Delta, dDelta = char_matrix(system, s)
        try:
            ratio = np.trace(np.linalg.solve(Delta, dDelta))
        except np.linalg.LinAlgError:
            return s, True              # exactly singular: s is a root
        if ratio == 0 or not np.isfinite(ratio):
            return s, False
        step = 1.0 / ratio
        s = s - step
        if abs(step) <= tol * max(1.0, abs(s)):
            return s, True
    return s, False


def _mp_polish(system: NeutralSystem, s: complex, digits: int = 30, steps: int = 3):
    """Newton steps at ``digits`` precision; returns the root and ``|det Δ|`` there."""
    with mp.workdps(digits):
        A0, A1, D = (mp.matrix(system.A0.tolist()), mp.matrix(system.A1.tolist()),
                     mp.matrix(system.D.tolist()))
        I = mp.eye(system.n)
        h = mp.mpf(system.h)
        z = mp.mpc(s.real, s.imag)

        def mats(z):
            e = mp.exp(-z * h)
            return (z * I - A0 - z * e * D - e * A1,
                    I - e * D + z * h * e * D + h * e * A1)

        for _ in range(steps):
            Dl, dDl = mats(z)
            if mp.det(Dl) == 0:
                break
            X = mp.inverse(Dl) * dDl
            tr = sum(X[i, i] for i in range(system.n))
            if tr == 0:
                break
            z = z - 1 / tr
        res = abs(mp.det(mats(z)[0]))
        return complex(z), float(res)


def _dedupe(roots, tol):
    out = []
    for s in sorted(roots, key=lambda z: (-z.real, z.imag)):
        if all(abs(s - t) > tol * max(1.0, abs(s)) for t in out):
            out.append(s)
    return out


def _candidates_to_roots(system, vals, region, tol):
    found = []
    for v in vals:
        if not region.contains(v, pad=0.1 * max(1.0, abs(v))):
            continue
        s, ok = _newton(system, complex(v), tol)
        if ok and region.contains(s):
            found.append(s)
    return _dedupe(found, 1e-8)


def _same_sets(a, b, tol=1e-8):
    if len(a) != len(b):
        return False
    return all(min(abs(s - t) for t in b) <= tol * max(1.0, abs(s)) for s in a)


def characteristic_roots(system: NeutralSystem, region: Region | None = None,
                         grid: int = 40, max_grid: int = 640, tol: float = 1e-14) -> RootSet:
    """Characteristic roots inside ``region`` (default :func:`default_region`).

    ``grid`` collocation nodes are doubled until the polished root set no
    longer changes (to ``1e-8``); each root is finally refined at 30 digits.
    """
    region = default_region(system) if region is None else region
    M = grid
    prev = None
    history = []
    while True:
        vals = collocation_eigenvalues(system, M)
        roots = _candidates_to_roots(system, vals, region, tol)
        history.append((M, len(roots)))
        if prev is not None and _same_sets(prev, roots):
            break
        if 2 * M > max_grid:
            raise RootFindingError("collocation did not converge",
                                   {"history": history, "region": region})
        prev = roots
        M *= 2
    polished, res = [], []
    for s in roots:
        z, r = _mp_polish(system, s)
        polished.append(z)
        res.append(r)
    order = sorted(range(len(polished)), key=lambda k: (-polished[k].real, polished[k].imag))
    return RootSet([polished[k] for k in order], region, M, tol, [res[k] for k in order])


def roots_to_csv(rs: RootSet, path_or_file) -> None:
    _write_csv(path_or_file, ["re", "im", "residual"],
               [[repr(s.real), repr(s.imag), repr(r)] for s, r in zip(rs.roots, rs.residuals)])


# ---------------------------------------------------------------------------
# method of steps


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray       # (K+1,)
    x: np.ndarray       # (K+1, n)
    dx: np.ndarray      # (K+1, n) right derivatives x'(t_k+)
    z: np.ndarray       # (K+1, n) x(t) - D x(t-h)
    dt: float

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=1)

    def to_csv(self, path_or_file) -> None:
        n = self.x.shape[1]
        header = ["t"] + [f"x{i}" for i in range(n)] + [f"dx{i}" for i in range(n)]
        rows = [[repr(float(t))] + [repr(float(v)) for v in xs] + [repr(float(v)) for v in ds]
                for t, xs, ds in zip(self.t, self.x, self.dx)]
        _write_csv(path_or_file, header, rows)


def _as_vec_fn(f, n):
    def g(t):
        return np.asarray(f(t), dtype=float).reshape(n)
    return g


def _hermite(x0, x1, d0, d1, dt, c):
    """Cubic Hermite value and derivative at ``t0 + c dt``."""
    h00 = 2 * c**3 - 3 * c**2 + 1
    h10 = c**3 - 2 * c**2 + c
    h01 = -2 * c**3 + 3 * c**2
    h11 = c**3 - c**2
    val = h00 * x0 + h10 * dt * d0 + h01 * x1 + h11 * dt * d1
    g00 = (6 * c**2 - 6 * c) / dt
    g10 = 3 * c**2 - 4 * c + 1
    g01 = (-6 * c**2 + 6 * c) / dt
    g11 = 3 * c**2 - 2 * c
    der = g00 * x0 + g10 * d0 + g01 * x1 + g11 * d1
    return val, der


def simulate_method_of_steps(system: NeutralSystem, phi, T: float, dt: float | None = None,
                             dphi=None) -> Trajectory:
    """Fixed-step RK4 for ``z = x - D x(t-h)``, ``z' = A0 x + A1 x(t-h)``.

    ``dt`` is rounded down to ``h/m`` for an integer ``m`` so that delayed
    stage times fall on stored steps; delayed values between steps are cubic
    Hermite interpolants of the stored values and one-sided derivatives
    (these jump at multiples of ``h``).  ``dphi`` defaults to a central
    difference of ``phi``.
    """
    n, h = system.n, system.h
    dt = h / 200 if dt is None else float(dt)
    if not dt > 0 or not T > 0:
        raise ValueError("T and dt must be positive")
    if dt > h:
        raise ValueError(f"dt={dt} exceeds the delay h={h}")
    m = int(math.ceil(h / dt - 1e-9))
    dt = h / m
    K = int(math.ceil(T / dt - 1e-9))
    A0, A1, D = system.A0, system.A1, system.D
    phi = _as_vec_fn(phi, n)
    if dphi is None:
        eps = 1e-6 * h

        def dphi(t):
            a, b = max(t - eps, -h), min(t + eps, 0.0)
            return (phi(b) - phi(a)) / (b - a)
    dphi = _as_vec_fn(dphi, n)

    X = np.zeros((K + 1, n))
    dL = np.zeros((K + 1, n))       # derivative at t_k from the right
    dR = np.zeros((K + 1, n))       # derivative at t_k from the left
    Z = np.zeros((K + 1, n))

    def delayed(k, c):
        """``x`` and ``x'`` at ``t_k + c dt - h``."""
        j = k - m
        if j < 0:
            t = (j + c) * dt
            return phi(t), dphi(t)
        return _hermite(X[j], X[j + 1], dL[j], dR[j + 1], dt, c)

    X[0] = phi(0.0)
    xd0, _ = delayed(0, 0.0)
    Z[0] = X[0] - D @ xd0

    def rhs(z, xd):
        x = z + D @ xd
        return A0 @ x + A1 @ xd, x

    for k in range(K):
        (xa, da), (xb, db), (xc, dc) = delayed(k, 0.0), delayed(k, 0.5), delayed(k, 1.0)
        k1, _ = rhs(Z[k], xa)
        dL[k] = k1 + D @ da
        k2, _ = rhs(Z[k] + 0.5 * dt * k1, xb)
        k3, _ = rhs(Z[k] + 0.5 * dt * k2, xb)
        k4, _ = rhs(Z[k] + dt * k3, xc)
        Z[k + 1] = Z[k] + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        fz, X[k + 1] = rhs(Z[k + 1], xc)
        dR[k + 1] = fz + D @ dc
    xa, da = delayed(K, 0.0)
    f, _ = rhs(Z[K], xa)
    dL[K] = f + D @ da
    t = np.arange(K + 1) * dt
    return Trajectory(t=t, x=X, dx=dL, z=Z, dt=dt)


def decay_probe(system: NeutralSystem, T: float | None = None, phi=None, dt=None):
    """Growth-rate estimate from a simulation: slope of log window maxima of ``‖x‖``.

    Returns ``(verdict, slope)`` with verdict ``"decay"``, ``"growth"`` or
    ``"undetermined"`` (``|slope|`` below ``1e-3``).
    """
    h = system.h
    T = max(60 * h, 40.0) if T is None else T
    if phi is None:
        phi = lambda t: np.ones(system.n)
        dphi = lambda t: np.zeros(system.n)
    else:
        dphi = None
    tr = simulate_method_of_steps(system, phi, T, dt, dphi)
    w = max(h, 1.0)
    per = max(1, int(round(w / tr.dt)))
    norms = tr.norms()
    count = len(norms) // per
    peaks = np.array([norms[i * per:(i + 1) * per].max() for i in range(count)])
    mids = (np.arange(count) + 0.5) * per * tr.dt
    half = count // 2
    with np.errstate(divide="ignore"):
        logs = np.log(np.maximum(peaks[half:], 1e-300))
    slope = float(np.polyfit(mids[half:], logs, 1)[0]) if count - half >= 2 else 0.0
    if peaks[-1] < 1e-250:
        return "decay", slope
    if abs(slope) < 1e-3:
        return "undetermined", slope
    return ("growth" if slope > 0 else "decay"), slope


# ---------------------------------------------------------------------------
# D-subdivision for the scalar example


@dataclass(frozen=True)
class BoundaryCurve:
    kind: str                   # "s=0" or "s=iw"
    points: np.ndarray          # (k, 2) columns a0, a1
    omega: np.ndarray | None = None


def scalar_d_subdivision(d: float, h: float, omega_grid=None, a0_range=(-10.0, 10.0),
                         samples: int = 400) -> list[BoundaryCurve]:
    """Curves in the ``(a0, a1)`` plane where a root crosses the imaginary axis.

    ``s = 0`` gives the line ``a1 = -a0``.  For ``s = i w``, with
    ``c = cos(w h)`` and ``s_ = sin(w h)``,

        a1 = -w (1 - d c) / s_,     a0 = -w d s_ - a1 c,

    singular where ``w h`` is a multiple of pi, so branches are split there.
    The default sweep is ``w`` in ``(0, 20 pi / h)``.
    """
    if not abs(d) < 1:
        raise ValueError("need |d| < 1")
    if not h > 0:
        raise ValueError("need h > 0")
    a = np.linspace(a0_range[0], a0_range[1], samples)
    curves = [BoundaryCurve("s=0", np.column_stack([a, -a]))]
    if omega_grid is None:
        parts = []
        for k in range(20):
            lo, hi = k * np.pi / h, (k + 1) * np.pi / h
            pad = 1e-6 * (hi - lo)
            parts.append(np.linspace(lo + pad, hi - pad, samples))
    else:
        w = np.sort(np.asarray(omega_grid, dtype=float))
        w = w[w > 0]
        branch = np.floor(w * h / np.pi)
        on_edge = np.isclose(np.sin(w * h), 0.0, atol=1e-12)
        w, branch = w[~on_edge], branch[~on_edge]
        parts = [w[branch == b] for b in np.unique(branch)]
    for w in parts:
        if w.size == 0:
            continue
        c, s = np.cos(w * h), np.sin(w * h)
        a1 = -w * (1 - d * c) / s
        a0 = -w * d * s - a1 * c
        curves.append(BoundaryCurve("s=iw", np.column_stack([a0, a1]), w))
    return curves


def curves_to_csv(curves, path_or_file) -> None:
    rows = []
    for idx, cv in enumerate(curves):
        om = cv.omega if cv.omega is not None else [None] * len(cv.points)
        for (a0, a1), w in zip(cv.points, om):
            rows.append([idx, cv.kind, "" if w is None else repr(float(w)),
                         repr(float(a0)), repr(float(a1))])
    _write_csv(path_or_file, ["branch", "kind", "omega", "a0", "a1"], rows)


def _write_csv(path_or_file, header, rows) -> None:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if own:
            fh.close()
