"""Command line: census tables, verification reports and closing experiments.

Exit codes: 0 success, 2 bad input or configuration, 3 numerical failure,
4 a requested verification check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .census import IdentityClassError
from .closing import InapplicableError, closing_experiment
from .cone import LinearForm, NormLike, RangeError, norm_from_dict, simple_root
from .equidist import (
    MissingColumnError,
    census_shells,
    count_series,
    default_grid,
    holonomy_uniformity,
    ratio_at,
    read_census_csv,
    relative_spread,
    window_count,
    write_census_csv,
    build_census,
    threshold_counts,
)
from .group import ConfigError, GroupSpec, WordOverflowError, parse_group_config, parse_word
from .invariants import DecompositionError, NotLoxodromicError, NumericError, UnsupportedHolonomyError
from .linalg import ConvergenceError

log = logging.getLogger("flatcyl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4

CHECKS = ("counting", "holonomy", "windows", "norm-order")

# acceptance thresholds used by ``verify``
RESIDUAL_MAX = 0.05
SPREAD_MAX = 0.25
WINDOW_TOL = 0.25


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- argument helpers


def _load_json_arg(text: str):
    if text.startswith("@"):
        with open(text[1:], encoding="utf-8") as fh:
            text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc}") from None


def parse_psi(text: str | None, spec: GroupSpec) -> LinearForm:
    """``None`` or ``"factor-sum"``: sum of the first simple root of every factor.

    Otherwise JSON: a coefficient list, ``{"coefficients": [...]}`` or
    ``{"roots": [[factor, i], ...]}``.
    """
    if text is None or text == "factor-sum":
        return LinearForm(sum(simple_root(spec, f, 0).coefficients for f in range(len(spec.factors))))
    doc = _load_json_arg(text)
    if isinstance(doc, list):
        doc = {"coefficients": doc}
    if "coefficients" in doc:
        c = np.asarray(doc["coefficients"], dtype=float)
        if c.shape != (spec.flat_dim,):
            raise ConfigError(f"psi needs {spec.flat_dim} coefficients, got {c.size}")
        return LinearForm(c)
    if "roots" in doc:
        return LinearForm(sum(simple_root(spec, int(f), int(i)).coefficients for f, i in doc["roots"]))
    raise ConfigError("psi must give 'coefficients' or 'roots'")


def parse_norm(text: str) -> NormLike:
    doc = _load_json_arg(text)
    try:
        return norm_from_dict(doc)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad norm spec: {exc}") from None


def parse_grid(text: str | None) -> np.ndarray | None:
    """``T0:T1:STEP``, both ends included when they fall on the step."""
    if text is None:
        return None
    try:
        t0, t1, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"grid must look like T0:T1:STEP, got {text!r}") from None
    if step <= 0 or t1 < t0:
        raise UsageError("grid needs T0 <= T1 and STEP > 0")
    n = int(np.floor((t1 - t0) / step + 1e-9)) + 1
    return t0 + step * np.arange(n)


def parse_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected a comma separated list of numbers, got {text!r}") from None


def load_spec(path: str) -> GroupSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_group_config(fh.read())


# ---------------------------------------------------------------- outputs


def manifest(command: str, args: argparse.Namespace, params: dict) -> dict:
    return {
        "command": command,
        "config": args.config,
        "parameters": params,
        "seed": args.seed,
        "shards": getattr(args, "shards", None),
        "tool_version": __version__,
    }


def _atomic_write(path: str, write: Callable) -> None:
    """Write through a temp file in the target directory; nothing is left behind on failure."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".partial-")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: str | None, doc: dict) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        _atomic_write(path, lambda fh: fh.write(text))


def _write_manifest(out: str | None, man: dict, started: float) -> None:
    # wall-clock lives only here so the primary outputs stay byte-identical across runs
    if out is None:
        return
    doc = dict(man, wall_clock_seconds=round(time.time() - started, 3))
    _atomic_write(out + ".manifest.json", lambda fh: fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n"))


# ---------------------------------------------------------------- commands


def cmd_census(args: argparse.Namespace) -> int:
    started = time.time()
    spec = load_spec(args.config)
    psi = parse_psi(args.psi, spec)
    norms = [parse_norm(t) for t in args.norm]
    if args.max_length < 1:
        raise UsageError("--max-length must be at least 1")
    if args.shards < 1:
        raise UsageError("--shards must be at least 1")
    table = build_census(spec, args.max_length, psi, norms, shards=args.shards, workers=args.workers)
    man = manifest("census", args, {
        "max_length": args.max_length, "psi": [float(x) for x in psi.coefficients],
        "norms": [n.to_dict() for n in norms], "rows": len(table), "excluded": table.excluded,
    })
    _atomic_write(args.out, lambda fh: write_census_csv(table, fh))
    _write_manifest(args.out, man, started)
    log.info("wrote %d rows to %s", len(table), args.out)
    return EXIT_OK


def _angle_factors(table) -> list[int]:
    return [f for f, h in enumerate(table.hol) if h.dtype != object][:2]


def run_checks(table, checks: Sequence[str], grid: np.ndarray | None, norms: Sequence[NormLike] = ()) -> dict:
    """Measured statistics and pass/fail for each requested check."""
    report: dict = {}
    if not checks:
        return report
    if grid is None:
        grid = default_grid(table)
    series = None
    if any(c in checks for c in ("counting", "windows")):
        series = count_series(table, "psi", grid)
    if "counting" in checks:
        shells = census_shells(table) if table.lengths.max() >= 3 else grid[-3:]
        ratios = ratio_at(series, table.ell_psi, shells)
        spread = relative_spread(ratios)
        report["counting"] = dict(
            series.to_dict(), shells=[float(x) for x in shells], shell_ratios=[float(x) for x in ratios],
            spread=spread, thresholds={"residual": RESIDUAL_MAX, "spread": SPREAD_MAX},
            passed=bool(series.residual < RESIDUAL_MAX and spread < SPREAD_MAX),
        )
    if "holonomy" in checks:
        factors = _angle_factors(table)
        if not factors:
            raise MissingColumnError("hol_0 (no angle-typed holonomy column)")
        uni = holonomy_uniformity(table, float(grid[-1]), factors)
        report["holonomy"] = dict(uni.to_dict(), T=float(grid[-1]), factors=factors, passed=uni.uniform)
    if "windows" in checks:
        factors = _angle_factors(table)
        if not factors:
            raise MissingColumnError("hol_0 (no angle-typed holonomy column)")
        win = [(np.pi / 2, 3 * np.pi / 2)] * len(factors)
        obs, pred = window_count(table, float(grid[-1]), win, series.delta, factors)
        ratio = obs / pred if pred > 0 else float("inf")
        report["windows"] = {
            "T": float(grid[-1]), "windows": [list(w) for w in win], "observed": obs, "predicted": pred,
            "ratio": ratio, "threshold": WINDOW_TOL, "passed": bool(abs(ratio - 1) < WINDOW_TOL),
        }
    if "norm-order" in checks:
        cols = [n for n in table.n_values]
        if not cols:
            raise MissingColumnError("norm column (the census has none)")
        out = {}
        comparisons = {n.name: n.comparison for n in norms if n.comparison is not None}
        for name in cols:
            C = comparisons.get(name)
            vals = table.n_values[name]
            n_counts = threshold_counts(vals, grid)
            entry = {"grid": [float(x) for x in grid], "counts": [int(x) for x in n_counts]}
            if C is None:
                entry.update(comparison=None, passed=True)
            else:
                psi_counts = threshold_counts(table.ell_psi, C * grid)
                entry.update(comparison=C, psi_counts=[int(x) for x in psi_counts],
                             passed=bool(np.all(n_counts <= psi_counts)))
            out[name] = entry
        report["norm-order"] = dict(out, passed=all(v["passed"] for v in out.values()))
    return report


def cmd_verify(args: argparse.Namespace) -> int:
    started = time.time()
    spec = load_spec(args.config)
    checks = [c for c in (args.checks.split(",") if args.checks else []) if c]
    for c in checks:
        if c not in CHECKS:
            raise UsageError(f"unknown check {c!r}; choose from {', '.join(CHECKS)}")
    norms = [parse_norm(t) for t in args.norm]
    table = read_census_csv(spec, args.census)
    grid = parse_grid(args.grid)
    results = run_checks(table, checks, grid, norms)
    man = manifest("verify", args, {"census": args.census, "checks": checks,
                                     "grid": None if grid is None else [float(x) for x in grid]})
    doc = {"manifest": man, "checks": results, "passed": all(r["passed"] for r in results.values())}
    _write_json(args.out, doc)
    _write_manifest(args.out, man, started)
    return EXIT_OK if doc["passed"] else EXIT_CHECK


def cmd_closing(args: argparse.Namespace) -> int:
    started = time.time()
    spec = load_spec(args.config)
    word = parse_word(args.word)
    eps = parse_floats(args.eps)
    grid = parse_grid(args.grid)
    run = closing_experiment(spec, word, eps, grid, trials=args.trials, seed=args.seed, spread=args.spread)
    man = manifest("closing", args, {"word": args.word, "epsilon": eps, "trials": args.trials, "spread": args.spread,
                                      "T_grid": None if grid is None else [float(x) for x in grid]})
    doc = {
        "manifest": man,
        "gamma_word": args.word,
        "epsilon": eps,
        "T_grid": None if grid is None else [float(x) for x in grid],
        "per_trial": [r.to_dict() for r in run.reports],
        "skipped": [{"epsilon": e, "power": k, "trial": j, "reason": why} for e, k, j, why in run.skipped],
        "fits": None if run.fits is None else run.fits.to_dict(),
    }
    _write_json(args.out, doc)
    _write_manifest(args.out, man, started)
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flatcyl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="group configuration JSON")
        sp.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("census", help="primitive-class census to CSV")
    common(c)
    c.add_argument("--max-length", "-L", type=int, required=True)
    c.add_argument("--psi", default=None, help="linear form: JSON, @file, or factor-sum (default)")
    c.add_argument("--norm", action="append", default=[], help="norm-like function: JSON or @file (repeatable)")
    c.add_argument("--shards", type=int, default=1)
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_census)

    v = sub.add_parser("verify", help="counting / holonomy / window / norm-order checks on a census CSV")
    common(v)
    v.add_argument("--census", required=True)
    v.add_argument("--checks", default="", help=f"comma separated subset of {','.join(CHECKS)}")
    v.add_argument("--grid", default=None, help="T0:T1:STEP (default: from the census completeness thresholds)")
    v.add_argument("--norm", action="append", default=[], help="norm spec carrying a comparison constant")
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_verify)

    k = sub.add_parser("closing", help="effective closing lemma experiment")
    common(k)
    k.add_argument("--word", required=True, help="e.g. \"a b'\"")
    k.add_argument("--eps", default="0.04,0.02,0.01,0.005")
    k.add_argument("--grid", default=None, help="target T values T0:T1:STEP, realised by powers of the word")
    k.add_argument("--trials", type=int, default=20)
    k.add_argument("--spread", type=float, default=1.0, help="sampling radius as a fraction of epsilon")
    k.add_argument("--out", default=None)
    k.set_defaults(func=cmd_closing)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, MissingColumnError, RangeError, IdentityClassError, InapplicableError,
            NotLoxodromicError, UnsupportedHolonomyError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, ConvergenceError, NumericError, DecompositionError, WordOverflowError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
