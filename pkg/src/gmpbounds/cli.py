"""Command-line interface.

Exit status: 0 on success, 1 for invalid input, 2 when a solver fails to
converge, 3 when the data are infeasible (inconsistent with no arbitrage).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
from dataclasses import replace
from typing import Sequence

from .errors import (
    DegreeOverflow,
    GmpBoundsError,
    Infeasible,
    InfeasibleAtCap,
    InvalidInput,
    NoBoundAvailable,
    ParseError,
    PartitionOverflow,
    SolverError,
    ValidationError,
)
from .model import GmpProblem, load_problem_file
from .partition import DEFAULT_CELL_LIMIT, build_cells, cells_to_csv
from .relaxation import DIRECTIONS, BoundReport, assemble_outer, normalize, solve_outer, sweep_strikes
from .solver import SolverSettings, write_sdpa
from .support import suggest_B, suggest_components

log = logging.getLogger("gmpbounds")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_INFEASIBLE = 0, 1, 2, 3
INPUT_ERRORS = (ParseError, ValidationError, DegreeOverflow, PartitionOverflow,
                InvalidInput, NoBoundAvailable)


def _num(v: float, precision: int) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return f"{float(v) + 0.0:.{precision}g}"  # + 0.0 turns -0.0 into 0.0


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def _csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _emit(args, header, rows) -> None:
    sys.stdout.write(_csv(header, rows) if args.emit == "csv" else _table(header, rows))


def _settings(args) -> SolverSettings:
    return SolverSettings(max_iterations=args.max_iterations,
                          feasibility_tol=args.tol, gap_tol=args.tol)


def _load(args) -> GmpProblem:
    p = load_problem_file(args.config)
    if getattr(args, "B", None) is not None:
        p = p.with_bounds(B=args.B)
    return p


def _status_code(reports: Sequence[BoundReport]) -> int:
    if any(r.status == "infeasible" for r in reports):
        return EXIT_INFEASIBLE
    if any(not r.ok for r in reports):
        return EXIT_SOLVER
    return EXIT_OK


def _directions(choice: str) -> tuple[str, ...]:
    return DIRECTIONS if choice == "both" else (choice,)


def _sdpa_path(path: str, direction: str, several: bool) -> str:
    if not several:
        return path
    root, ext = os.path.splitext(path)
    return f"{root}-{direction}{ext or '.dat-s'}"


BOUND_HEADER = ["K", "direction", "level", "value", "status", "gap"]
SIZE_HEADER = ["cells", "variables", "psd_blocks", "equalities", "inequalities"]


def _bound_row(r: BoundReport, prec: int, timing: bool) -> list[str]:
    row = [_num(r.strike, prec), r.direction, str(r.level), _num(r.value, prec), r.status,
           f"{r.duality_gap:.2e}"]
    if timing:
        row.append(f"{r.wall_time:.3f}")
    return row + [str(r.cells), str(r.variables), str(r.psd_blocks), str(r.equalities),
                  str(r.inequalities)]


def _bound_header(timing: bool) -> list[str]:
    return BOUND_HEADER + (["seconds"] if timing else []) + SIZE_HEADER


# -- subcommands --------------------------------------------------------------

def cmd_bound(args) -> int:
    p = _load(args)
    dirs = _directions(args.direction)
    if args.export_sdpa:
        for d in dirs:
            outer = assemble_outer(p, args.level, d, args.cell_limit)
            path = _sdpa_path(args.export_sdpa, d, len(dirs) > 1)
            write_sdpa(outer.program, path)
            log.info("wrote %s", path)
    reports = [solve_outer(p, args.level, d, _settings(args), args.cell_limit) for d in dirs]
    timing = not args.no_timing
    _emit(args, _bound_header(timing), [_bound_row(r, args.precision, timing) for r in reports])
    for r in reports:
        if r.message:
            log.warning("%s: %s", r.direction, r.message)
    return _status_code(reports)


def _parse_strikes(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad strike list {text!r}") from exc


def cmd_sweep(args) -> int:
    p = _load(args)
    strikes = _parse_strikes(args.strikes)
    if not strikes:
        raise ValidationError("no strikes given")
    results = sweep_strikes(p, strikes, args.level, _settings(args), args.workers)
    timing = not args.no_timing
    header = ["K", "lower", "upper", "lower_status", "upper_status"]
    if timing:
        header += ["lower_seconds", "upper_seconds"]
    rows, reports, failed_input = [], [], False
    for K, lo, up in results:
        row = [_num(K, args.precision)]
        vals, stats, secs = [], [], []
        for rep in (lo, up):
            if isinstance(rep, BoundReport):
                reports.append(rep)
                vals.append(_num(rep.value, args.precision))
                stats.append(rep.status)
                secs.append(f"{rep.wall_time:.3f}")
            else:
                failed_input = True
                log.error("K = %g: %s", K, rep)
                vals.append("nan")
                stats.append("error")
                secs.append("")
        rows.append(row + vals + stats + (secs if timing else []))
    _emit(args, header, rows)
    code = _status_code(reports)
    return code if code != EXIT_OK or not failed_input else EXIT_INPUT


def cmd_inner(args) -> int:
    from .inner import InnerInstance, min_feasible_epsilon, solve_inner

    p = _load(args)
    inst = InnerInstance(p, args.level, 0.0, args.basis)
    settings = _settings(args)
    if args.eps == "auto":
        eps = min_feasible_epsilon(inst, args.eps_tol, settings)
    else:
        try:
            eps = float(args.eps)
        except ValueError as exc:
            raise ValidationError(f"--eps must be 'auto' or a number, got {args.eps!r}") from exc
    inst = replace(inst, epsilon=eps)
    reports = [solve_inner(inst, d, settings) for d in _directions(args.direction)]
    timing = not args.no_timing
    header = ["K", "direction", "level", "basis", "epsilon", "value", "status"]
    header += ["seconds"] if timing else []
    rows = []
    for r in reports:
        row = [_num(r.strike, args.precision), r.direction, str(r.level), args.basis,
               _num(eps, args.precision), _num(r.value, args.precision), r.status]
        rows.append(row + ([f"{r.wall_time:.3f}"] if timing else []))
    _emit(args, header, rows)
    return _status_code(reports)


def cmd_oracle(args) -> int:
    from .oracle import lp_bound

    p = _load(args)
    grid = args.grid or (2001 if p.n == 1 else 201)
    settings = _settings(args)
    rows = []
    for d in _directions(args.direction):
        v = lp_bound(p, grid, d, settings, max_assets=args.max_assets)
        rows.append([_num(p.payoff.strike, args.precision), d, str(grid), _num(v, args.precision)])
    _emit(args, ["K", "direction", "grid", "value"], rows)
    return EXIT_OK


def cmd_suggest_b(args) -> int:
    p = load_problem_file(args.config)
    if p.M is None:
        raise NoBoundAvailable("no moment cap, so no support bound exists")
    sug = suggest_components(p.n, p.options, p.M)
    suggest_B(p, override=p.B)  # warns when the configured B is below the suggestion
    names = p.asset_names or tuple(f"asset{a + 1}" for a in range(p.n))
    rows = [[names[a], _num(c, args.precision)] for a, c in enumerate(sug.components)]
    rows.append(["B (with 1% margin)", _num(sug.B, args.precision)])
    rows.append(["configured B", _num(p.B, args.precision)])
    _emit(args, ["item", "value"], rows)
    if p.n > 1:
        log.warning("for several assets the suggested B is a heuristic, not a certified bound")
    return EXIT_OK


def cmd_dump_cells(args) -> int:
    p = _load(args)
    text = cells_to_csv(build_cells(normalize(p) if args.normalized else p, args.cell_limit))
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmpbounds",
        description="Arbitrage-consistent bounds on multi-asset European options.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="more log output (repeat for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, emit_default="table"):
        sp.add_argument("--config", required=True, help="problem config (JSON)")
        sp.add_argument("--emit", choices=("table", "csv"), default=emit_default)
        sp.add_argument("--precision", type=int, default=6, help="significant digits")
        sp.add_argument("--B", type=float, default=None, help="override the box bound B")

    def solver_flags(sp):
        sp.add_argument("--max-iterations", type=int, default=200)
        sp.add_argument("--tol", type=float, default=1e-8, help="feasibility and gap tolerance")
        sp.add_argument("--no-timing", action="store_true", help="omit wall-clock columns")

    sp = sub.add_parser("bound", help="outer relaxation bounds")
    common(sp)
    solver_flags(sp)
    sp.add_argument("--level", type=int, default=1)
    sp.add_argument("--direction", choices=("lower", "upper", "both"), default="both")
    sp.add_argument("--cell-limit", type=int, default=DEFAULT_CELL_LIMIT)
    sp.add_argument("--export-sdpa", metavar="PATH",
                    help="also write the program(s) in SDPA sparse format")
    sp.set_defaults(func=cmd_bound)

    sp = sub.add_parser("sweep", help="outer bounds for a list of strikes")
    common(sp, emit_default="csv")
    solver_flags(sp)
    sp.add_argument("--strikes", required=True, help="comma separated strikes")
    sp.add_argument("--level", type=int, default=1)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("inner", help="inner SOS-density hierarchy")
    common(sp)
    solver_flags(sp)
    sp.add_argument("--level", type=int, default=2)
    sp.add_argument("--eps", default="auto", help="'auto' or a value")
    sp.add_argument("--eps-tol", type=float, default=1e-5)
    sp.add_argument("--basis", choices=("laguerre", "monomial"), default="laguerre")
    sp.add_argument("--direction", choices=("lower", "upper", "both"), default="both")
    sp.set_defaults(func=cmd_inner)

    sp = sub.add_parser("oracle", help="grid LP check value")
    common(sp)
    solver_flags(sp)
    sp.add_argument("--grid", type=int, default=None,
                    help="points per axis (default 2001 for one asset, 201 otherwise)")
    sp.add_argument("--direction", choices=("lower", "upper", "both"), default="both")
    sp.add_argument("--max-assets", type=int, default=2)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("suggest-b", help="support bound B from the data")
    sp.add_argument("--config", required=True)
    sp.add_argument("--emit", choices=("table", "csv"), default="table")
    sp.add_argument("--precision", type=int, default=6)
    sp.set_defaults(func=cmd_suggest_b)

    sp = sub.add_parser("dump-cells", help="write the cell partition as CSV")
    sp.add_argument("--config", required=True)
    sp.add_argument("--B", type=float, default=None)
    sp.add_argument("--cell-limit", type=int, default=DEFAULT_CELL_LIMIT)
    sp.add_argument("--normalized", action="store_true", help="cells of the data divided by B")
    sp.add_argument("--output", "-o", default=None)
    sp.set_defaults(func=cmd_dump_cells)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except (Infeasible, InfeasibleAtCap) as exc:
        log.error("infeasible: %s", exc)
        return EXIT_INFEASIBLE
    except SolverError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except GmpBoundsError as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
