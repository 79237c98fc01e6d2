"""Neutral-type linear systems with one discrete delay.

    d/dt [x(t) - D x(t-h)] = A0 x(t) + A1 x(t-h)

plus the weight ``W`` of the prescribed functional derivative ``-x' W x``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from mpmath import mp

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .precision import eigvalsh, norm2, set_precision, to_mp


class StructuralError(ValueError):
    """Inputs cannot describe a system at all (shapes, non-finite values)."""


class AssumptionError(ValueError):
    """The system is well-formed but violates a standing assumption."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ConfigError(ValueError):
    pass


def _frozen(a, name: str) -> np.ndarray:
    try:
        arr = np.array(a, dtype=float)
    except (TypeError, ValueError) as exc:
        raise StructuralError(f"{name} is not a real matrix: {exc}") from None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise StructuralError(f"{name} must be a non-empty square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise StructuralError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NeutralSystem:
    """The quadruple ``(A0, A1, D, h)`` and weight ``W`` (identity by default).

    Entries are stored as IEEE doubles; every downstream computation converts
    them exactly into the working precision.
    """

    A0: np.ndarray
    A1: np.ndarray
    D: np.ndarray
    h: float
    W: np.ndarray | None = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        A0 = _frozen(self.A0, "A0")
        n = A0.shape[0]
        mats = {"A0": A0}
        for key in ("A1", "D"):
            mats[key] = _frozen(getattr(self, key), key)
        W = np.eye(n) if self.W is None else self.W
        mats["W"] = _frozen(W, "W")
        for key, m in mats.items():
            if m.shape != (n, n):
                raise StructuralError(f"{key} has shape {m.shape}, expected {(n, n)}")
        for key, m in mats.items():
            object.__setattr__(self, key, m)
        h = float(self.h)
        if not math.isfinite(h):
            raise StructuralError("h must be finite")
        object.__setattr__(self, "h", h)

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    def key(self) -> tuple:
        """Hashable identity used for caching."""
        return (self.A0.tobytes(), self.A1.tobytes(), self.D.tobytes(),
                self.W.tobytes(), self.h, self.n)

    def __eq__(self, other):
        if not isinstance(other, NeutralSystem):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def mp_matrices(self):
        """``(A0, A1, D, W, h)`` converted to the working precision."""
        return to_mp(self.A0), to_mp(self.A1), to_mp(self.D), to_mp(self.W), mp.mpf(self.h)


@dataclass(frozen=True)
class GrowthConstants:
    r: object
    a0: object
    norm_A0: object
    norm_A1: object
    norm_D: object
    lambda_min_W: object


def validate(system: NeutralSystem) -> list[str]:
    """List the violated standing assumptions; an empty list means admissible.

    Structural problems (shapes, non-finite entries) are raised as
    :class:`StructuralError` when the system is constructed, so they never
    show up here.
    """
    problems = []
    if not system.h > 0:
        problems.append(f"h>0 violated (h={system.h})")
    W = system.W
    if not np.array_equal(W, W.T):
        problems.append("W=W^T violated")
    else:
        lam = eigvalsh(to_mp(W))[0]
        if not lam > 0:
            problems.append(f"W>0 violated (lambda_min={mp.nstr(lam, 6)})")
    nD = norm2(to_mp(system.D))
    if not nD < 1:
        problems.append(f"‖D‖<1 violated (‖D‖={mp.nstr(nD, 8)})")
    return problems


def require_admissible(system: NeutralSystem) -> None:
    problems = validate(system)
    if problems:
        raise AssumptionError(problems)


def growth_constants(system: NeutralSystem) -> GrowthConstants:
    """``r = (‖A0‖+‖A1‖)/(1-‖D‖)`` and ``a0 = λmin(W)/(4r)`` in spectral norms."""
    require_admissible(system)
    A0, A1, D, W, _ = system.mp_matrices()
    nA0, nA1, nD = norm2(A0), norm2(A1), norm2(D)
    lam = eigvalsh(W)[0]
    r = (nA0 + nA1) / (1 - nD)
    a0 = lam / (4 * r) if r > 0 else mp.inf
    return GrowthConstants(r=r, a0=a0, norm_A0=nA0, norm_A1=nA1, norm_D=nD, lambda_min_W=lam)


def scalar_system(a0: float, a1: float, d: float, h: float, w: float = 1.0) -> NeutralSystem:
    return NeutralSystem([[a0]], [[a1]], [[d]], h, [[w]],
                         name=f"scalar(a0={a0}, a1={a1}, d={d}, h={h})")


def example2_matrices(a: float, b: float, h: float, d: float, sigma: float,
                      kp: float, ki: float) -> NeutralSystem:
    """PI control of a passive plant, shifted by ``sigma`` (2x2 neutral system)."""
    alpha1 = d + kp
    if alpha1 == 0:
        raise StructuralError("singular parameterization: d + kp = 0")
    es = math.exp(sigma * h)
    alpha2 = (d - kp) * es
    gamma1 = b * ki * d + a * ki
    gamma2 = (b * ki * d - a * ki) * es
    beta1 = (b * kp + a) * d + b * d**2 + a * kp + ki
    beta2 = ((b * kp + a) * d - b * d**2 - a * kp - ki) * es
    D = [[0.0, 0.0], [0.0, -alpha2 / alpha1]]
    A0 = [[0.0, 1.0],
          [(-sigma**2 * alpha1 + sigma * beta1 - gamma1) / alpha1,
           (-beta1 + 2 * sigma * alpha1) / alpha1]]
    A1 = [[0.0, 0.0],
          [(-sigma**2 * alpha2 + sigma * beta2 - gamma2) / alpha1,
           (-beta2 + 2 * sigma * alpha2) / alpha1]]
    return NeutralSystem(A0, A1, D, h, name=f"example2(kp={kp}, ki={ki})")


EXAMPLE2_DEFAULTS = dict(a=0.4, b=50.0, h=0.2, d=0.8, sigma=0.3)


# ---------------------------------------------------------------------------
# config files


def _read_config_text(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def system_from_mapping(cfg: dict, name: str = "") -> NeutralSystem:
    """Build a system from a parsed config mapping.

    Either explicit ``A0``/``A1``/``D``/``h`` (optional ``W``) or the
    ``example2`` shorthand ``{a, b, h, d, sigma, kp, ki}``.
    """
    if "example2" in cfg:
        params = dict(EXAMPLE2_DEFAULTS)
        params.update(cfg["example2"])
        missing = {"kp", "ki"} - params.keys()
        if missing:
            raise ConfigError(f"example2 needs {sorted(missing)}")
        unknown = params.keys() - {"a", "b", "h", "d", "sigma", "kp", "ki"}
        if unknown:
            raise ConfigError(f"unknown example2 keys {sorted(unknown)}")
        return example2_matrices(**{k: float(v) for k, v in params.items()})
    missing = [k for k in ("A0", "A1", "D", "h") if k not in cfg]
    if missing:
        raise ConfigError(f"missing keys {missing}")
    return NeutralSystem(cfg["A0"], cfg["A1"], cfg["D"], cfg["h"], cfg.get("W"),
                         name=name or cfg.get("name", ""))


def load_config(path, apply_precision: bool = True) -> tuple[NeutralSystem, dict]:
    """Read a JSON/TOML system definition; returns ``(system, raw mapping)``.

    ``precision_digits``, when present and ``apply_precision`` is set, is
    applied to the process-wide precision.
    """
    path = Path(path)
    cfg = _read_config_text(path)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    system = system_from_mapping(cfg, name=path.stem)
    if apply_precision and "precision_digits" in cfg:
        set_precision(int(cfg["precision_digits"]))
    return system, cfg
