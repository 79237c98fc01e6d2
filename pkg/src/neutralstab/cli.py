"""Command-line front end.

Exit status: 0 Stable, 1 Unstable, 2 Inconclusive; 3 bad input (config or
violated assumption), 4 oracle disagreement in ``verify``, 5 internal error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from mpmath import mp

from . import precision as prec
from .lyapunov import LyapunovMatrixError, residuals, u_grid_rows
from .moments import delay_lyapunov_matrix
from .oracle import characteristic_roots, decay_probe
from .stability import (INCONCLUSIVE, STABLE, UNSTABLE, compute_N_star, delta_N, effective_mu,
                        full_test, sufficiency_constants)
from .system import (AssumptionError, ConfigError, StructuralError, _read_config_text,
                     system_from_mapping, validate)

EXIT = {STABLE: 0, UNSTABLE: 1, INCONCLUSIVE: 2}
EXIT_INPUT, EXIT_DISAGREE, EXIT_INTERNAL = 3, 4, 5


class SweepError(ConfigError):
    pass


# ---------------------------------------------------------------------------
# argument handling


def _precision_arg(text: str):
    if text == "auto":
        return "auto"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected an integer or 'auto'") from None
    if value < 4:
        raise argparse.ArgumentTypeError("precision must be at least 4 digits")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--precision", type=_precision_arg, default=None,
                        help="working precision in significant digits, or 'auto' to raise it "
                             "until P_N is numerically reliable (default 16, or "
                             "NEUTRAL_STAB_PRECISION, or the config's precision_digits)")
    common.add_argument("--order", type=int, default=None, help="test P_N at this N instead of N*")
    common.add_argument("--max-order", type=int, default=None, help="cap on the tested order")
    common.add_argument("--tol", type=float, default=None,
                        help="relative PSD tolerance (default 10^-(digits-10))")
    common.add_argument("--nstar-rule", choices=("refined", "max"), default="refined",
                        help="rate used in the N* formula (default: refined)")
    common.add_argument("--no-ladder", action="store_true",
                        help="skip the early necessity checks at N = 2, 4, 8, ...")
    common.add_argument("--seed", type=int, default=None, help="accepted and ignored; runs are "
                                                                "deterministic")

    p = argparse.ArgumentParser(prog="neutral-stab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common], help="stability verdict for one system")
    a.add_argument("config")
    a.add_argument("-o", "--out", help="also write the JSON report here")

    s = sub.add_parser("sweep", parents=[common], help="verdict map over a 2-D parameter grid")
    s.add_argument("spec")
    s.add_argument("-o", "--out", help="CSV output path (default stdout)")
    s.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    s.add_argument("--timing", action="store_true",
                   help="fill the wall_ms column (left empty by default so output is "
                        "reproducible byte for byte)")

    l = sub.add_parser("lyap", parents=[common], help="delay Lyapunov matrix on a grid")
    l.add_argument("config")
    l.add_argument("--grid", type=int, default=11, help="number of theta points on [0, h]")
    l.add_argument("-o", "--out", help="CSV output path (default stdout)")

    n = sub.add_parser("nstar", parents=[common], help="sufficiency constants and N*")
    n.add_argument("config")

    v = sub.add_parser("verify", parents=[common],
                       help="criterion verdict against root oracle and simulation")
    v.add_argument("config")
    v.add_argument("--horizon", type=float, default=None, help="simulation horizon")
    return p


def _configure_precision(args, cfg: dict) -> bool:
    """Apply precision in the order env < config < flag; returns the auto flag."""
    auto = False
    digits = None
    if "precision_digits" in cfg:
        digits = int(cfg["precision_digits"])
    if args.precision == "auto":
        auto = True
    elif args.precision is not None:
        digits = args.precision
    if digits is not None:
        prec.set_precision(digits)
    return auto


def _load(path):
    path = Path(path)
    cfg = _read_config_text(path)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return system_from_mapping(cfg, name=path.stem), cfg


def _test_kwargs(args, auto):
    tol = None if args.tol is None else args.tol
    return dict(order=args.order, max_order=args.max_order, tol=tol, ladder=not args.no_ladder,
                rule=args.nstar_rule, auto_precision=auto)


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(args) -> int:
    system, cfg = _load(args.config)
    auto = _configure_precision(args, cfg)
    report = full_test(system, **_test_kwargs(args, auto))
    text = report.to_json()
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return EXIT[report.verdict]


_PATH_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)((?:\[\d+\])*)$")


def _parse_path(path: str):
    parts = []
    for token in path.split("."):
        m = _PATH_RE.match(token)
        if not m:
            raise SweepError(f"bad parameter path {path!r}")
        parts.append(m.group(1))
        parts.extend(int(i) for i in re.findall(r"\[(\d+)\]", m.group(2)))
    return parts


def _set_path(cfg, parts, value):
    node = cfg
    for key in parts[:-1]:
        try:
            node = node[key]
        except (KeyError, IndexError, TypeError):
            raise SweepError(f"parameter path {parts} does not resolve") from None
    last = parts[-1]
    if isinstance(node, dict):
        if isinstance(last, int):
            raise SweepError(f"parameter path {parts} does not resolve")
        if last in node and isinstance(node[last], (list, dict)):
            raise SweepError(f"parameter path {parts} is not a scalar location")
        node[last] = value
        return
    if not isinstance(node, list) or not isinstance(last, int) or last >= len(node):
        raise SweepError(f"parameter path {parts} does not resolve")
    if isinstance(node[last], (list, dict)):
        raise SweepError(f"parameter path {parts} is not a scalar location")
    node[last] = value


def _axis_values(axis: dict, name: str):
    if "values" in axis:
        vals = [float(v) for v in axis["values"]]
    else:
        try:
            start, stop, num = float(axis["start"]), float(axis["stop"]), int(axis["num"])
        except KeyError as exc:
            raise SweepError(f"{name} needs 'values' or start/stop/num (missing {exc})") from None
        if num < 1:
            raise SweepError(f"{name}: num must be >= 1")
        vals = [start] if num == 1 else list(np.linspace(start, stop, num))
    if not vals:
        raise SweepError(f"{name}: empty grid")
    return vals


def load_sweep(path):
    """Parse a sweep spec; returns ``(base config, (path1, values1), (path2, values2), raw)``."""
    path = Path(path)
    spec = _read_config_text(path)
    base = spec.get("base")
    if isinstance(base, str):
        base_path = (path.parent / base)
        base = _read_config_text(base_path)
    if not isinstance(base, dict):
        raise SweepError("sweep spec needs a 'base' mapping or config path")
    axes = []
    for name in ("p1", "p2"):
        axis = spec.get(name)
        if not isinstance(axis, dict) or "path" not in axis:
            raise SweepError(f"sweep spec needs '{name}' with a 'path'")
        parts = _parse_path(axis["path"])
        _set_path(copy.deepcopy(base), parts, 0.0)       # resolves?
        axes.append((parts, _axis_values(axis, name)))
    return base, axes[0], axes[1], spec


def _sweep_point(task):
    base, p1, p2, v1, v2, digits, kwargs, timing = task
    prec.set_precision(digits)
    t0 = time.perf_counter()
    cfg = copy.deepcopy(base)
    _set_path(cfg, p1, v1)
    _set_path(cfg, p2, v2)
    row = {"p1": repr(float(v1)), "p2": repr(float(v2)), "verdict": "", "N_star": "",
           "lambda_min": "", "wall_ms": "", "note": ""}
    try:
        system = system_from_mapping(cfg)
        problems = validate(system)
        if problems:
            row["verdict"] = "Invalid"
            row["note"] = "; ".join(problems)
        else:
            rep = full_test(system, **kwargs)
            row["verdict"] = rep.verdict
            row["N_star"] = "" if rep.N_star is None else str(rep.N_star)
            if rep.lambda_min_PN is not None:
                row["lambda_min"] = prec.to_decimal(rep.lambda_min_PN)
            if rep.verdict == INCONCLUSIVE:
                row["note"] = rep.message
    except (StructuralError, ConfigError) as exc:
        row["verdict"] = "Invalid"
        row["note"] = str(exc)
    except Exception as exc:           # recorded in-row; the sweep continues
        row["verdict"] = "Error"
        row["note"] = f"{type(exc).__name__}: {exc}"
    if timing:
        row["wall_ms"] = str(int(round(1000 * (time.perf_counter() - t0))))
    return row


SWEEP_COLUMNS = ["p1", "p2", "verdict", "N_star", "lambda_min", "wall_ms", "note"]


def run_sweep(base, axis1, axis2, digits, kwargs, jobs=1, timing=False):
    (p1, vals1), (p2, vals2) = axis1, axis2
    tasks = [(base, p1, p2, a, b, digits, kwargs, timing) for a in vals1 for b in vals2]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_point, tasks))
    return [_sweep_point(t) for t in tasks]


def write_sweep_csv(rows, fh):
    w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


def cmd_sweep(args) -> int:
    base, a1, a2, spec = load_sweep(args.spec)
    auto = _configure_precision(args, spec)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    rows = run_sweep(base, a1, a2, prec.get_precision(), _test_kwargs(args, auto),
                     jobs=args.jobs, timing=args.timing)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            write_sweep_csv(rows, fh)
    else:
        write_sweep_csv(rows, sys.stdout)
    return 0


def cmd_lyap(args) -> int:
    system, cfg = _load(args.config)
    _configure_precision(args, cfg)
    if args.grid < 1:
        raise ConfigError("--grid must be >= 1")
    dlm = delay_lyapunov_matrix(system)
    n = dlm.n
    header = ["theta"] + [f"U{i}{j}" for i in range(n) for j in range(n)]
    rows = u_grid_rows(dlm, args.grid)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    res = residuals(dlm, 100)
    summary = (f"dynamic {mp.nstr(max(res['dynamic'], res['dynamic_negative']), 3)}\n"
               f"symmetry {mp.nstr(res['symmetry'], 3)}\n"
               f"algebraic {mp.nstr(res['algebraic'], 3)}\n")
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
        sys.stdout.write(summary)
    else:
        sys.stdout.write(buf.getvalue())
        sys.stderr.write(summary)
    return 0


def cmd_nstar(args) -> int:
    system, cfg = _load(args.config)
    _configure_precision(args, cfg)
    from .system import require_admissible
    require_admissible(system)
    c = sufficiency_constants(system)
    N = compute_N_star(c, args.nstar_rule)
    out = {"N_star": N, "rule": args.nstar_rule,
           "delta_N_star": prec.to_decimal(
               delta_N(c, N, effective_mu(c, N, args.nstar_rule))),
           "constants": c.as_dict()}
    print(json.dumps(out, indent=1))
    return 0


def cmd_verify(args) -> int:
    system, cfg = _load(args.config)
    auto = _configure_precision(args, cfg)
    report = full_test(system, **_test_kwargs(args, auto))
    roots = characteristic_roots(system)
    root_verdict = roots.verdict
    probe, slope = decay_probe(system, T=args.horizon)
    sim_verdict = {"decay": STABLE, "growth": UNSTABLE}.get(probe, INCONCLUSIVE)
    print(f"{'method':<12} {'verdict':<13} detail")
    print(f"{'criterion':<12} {report.verdict:<13} N*={report.N_star} N_used={report.N_used} "
          f"digits={report.precision_digits}")
    print(f"{'roots':<12} {root_verdict:<13} rightmost Re s = {roots.abscissa:.6g}")
    print(f"{'simulation':<12} {sim_verdict:<13} growth rate {slope:.6g}")
    verdicts = {report.verdict, root_verdict, sim_verdict}
    if len(verdicts) == 1:
        print(f"agreement: all {report.verdict}")
        return 0
    if report.verdict == INCONCLUSIVE and len(verdicts - {INCONCLUSIVE}) == 1:
        print(f"criterion inconclusive: {report.message}")
        return EXIT[INCONCLUSIVE]
    print("DISAGREEMENT", file=sys.stderr)
    print(report.message, file=sys.stderr)
    return EXIT_DISAGREE


COMMANDS = {"analyze": cmd_analyze, "sweep": cmd_sweep, "lyap": cmd_lyap, "nstar": cmd_nstar,
            "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except AssumptionError as exc:
        print(f"error: assumption violated: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, StructuralError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except LyapunovMatrixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:      # report, never traceback-dump to the user
        print(f"error: internal failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
