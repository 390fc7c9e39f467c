"""Outer moment relaxations over a partition and the bounds they produce.

Each cell carries its own truncated moment vector. Option prices, moment
constraints, normalisation and the moment cap become linear constraints on
sums of Riesz functionals over cells; every cell contributes a moment
matrix and one localizing matrix per defining polynomial, all required to
be PSD, and every moment variable is nonnegative, so the blocks are doubly
nonnegative.

Two exact rescalings keep the programs well conditioned when ``B`` is
large. All price data are first divided by the largest strike, so the
interesting part of the box sits near 1 whatever ``B`` is. Then the
variables of cell ``i`` become ``z_alpha = y_alpha / sigma_i^|alpha|`` with
``sigma_i`` the largest coordinate of the cell, which is a diagonal
congruence on every block. Reported values are multiplied back.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DegreeOverflow, GmpBoundsError, IllConditioned, NumericalFailure
from .model import GmpProblem, MomentConstraint, ObservedOption, payoff_pieces
from .partition import DEFAULT_CELL_LIMIT, Partition, build_cells, cell_localizers
from .poly import (Polynomial, monomial_count, monomial_index, monomials, norm_power,
                   shifted_sum_index)
from .solver import ConicProgram, PsdBlock, SolverSettings, solve_conic

log = logging.getLogger(__name__)

DIRECTIONS = ("lower", "upper")


@dataclass(frozen=True)
class BoundReport:
    direction: str
    level: int
    value: float
    status: str
    duality_gap: float
    wall_time: float
    cells: int
    psd_blocks: int
    variables: int = 0
    equalities: int = 0
    inequalities: int = 0
    strike: float = float("nan")
    message: str = ""

    @property
    def ok(self) -> bool:
        """True when ``value`` is usable; ``inaccurate`` meets only the reduced tolerance."""
        return self.status in ("optimal", "inaccurate")


@dataclass(frozen=True)
class OuterProgram:
    """An assembled relaxation together with what is needed to interpret it.

    Its objective is in normalised units; multiply by ``scale`` for prices.
    """

    program: ConicProgram
    partition: Partition
    scale: float
    t: int
    vars_per_cell: int
    cell_scale: np.ndarray  # sigma_i per cell

    def moments(self, x: np.ndarray) -> np.ndarray:
        """Moments ``y`` of each cell (rows) in the normalised coordinates."""
        n = self.partition.cells[0].n if self.partition.cells else 1
        deg = np.array([sum(a) for a in monomials(n, self.t)])
        z = np.asarray(x).reshape(len(self.partition.cells), self.vars_per_cell)
        return z * self.cell_scale[:, None] ** deg[None, :]


def truncation_degree(p: GmpProblem, r: int) -> int:
    """``2r + 2 ceil(d_max / 2)`` with ``d_max`` the largest data degree."""
    if r < 1:
        raise ValueError("relaxation level must be >= 1")
    return 2 * r + 2 * math.ceil(p.max_degree / 2)


def data_scale(p: GmpProblem) -> float:
    """Largest strike in the data (``B`` when every strike is zero)."""
    s = max([o.strike for o in p.options] + [p.payoff.strike])
    return s if s > 0 else p.B


def normalize(p: GmpProblem, s: float | None = None) -> GmpProblem:
    """Divide all price data by ``s`` (default ``B``, giving the box ``[0, 1]^n``)."""
    s = p.B if s is None else float(s)
    options = tuple(ObservedOption(o.asset, o.strike / s, o.price / s) for o in p.options)
    moments = tuple(
        MomentConstraint(m.f.substitute_scale(s) * (1.0 / s ** m.f.degree),
                         m.rhs / s ** m.f.degree, m.relation)
        for m in p.moments
    )
    payoff = replace(p.payoff, strike=p.payoff.strike / s)
    M = None if p.M is None else p.M / s ** p.d
    return GmpProblem(p.n, payoff, options, moments, M, p.B / s, p.d, p.asset_names)


class _Rows:
    """Accumulates sparse constraint rows."""

    def __init__(self) -> None:
        self.r: list[np.ndarray] = []
        self.c: list[np.ndarray] = []
        self.v: list[np.ndarray] = []
        self.rhs: list[float] = []

    def add(self, cols: np.ndarray, vals: np.ndarray, rhs: float) -> None:
        k = len(self.rhs)
        self.r.append(np.full(len(cols), k))
        self.c.append(np.asarray(cols, np.int64))
        self.v.append(np.asarray(vals, float))
        self.rhs.append(rhs)

    def matrix(self, n: int):
        if not self.rhs:
            return None, None
        A = sp.csr_matrix(
            (np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
            shape=(len(self.rhs), n),
        )
        return A, np.array(self.rhs)


def _coeffs(f: Polynomial, index: dict) -> tuple[np.ndarray, np.ndarray]:
    items = list(f.terms.items())
    return (np.array([index[a] for a, _ in items], np.int64),
            np.array([c for _, c in items], float))


def _summed(f: Polynomial, cells: Sequence[int], size: int, index: dict, sigma: np.ndarray):
    """Columns and values of ``sum_{i in cells} L_i(f)`` in the scaled variables."""
    loc, val = _coeffs(f, index)
    deg = np.array([sum(a) for a in f.terms], float)
    cells = np.asarray(sorted(cells), np.int64)
    base = cells * size
    vals = val[None, :] * sigma[cells][:, None] ** deg[None, :]
    return (base[:, None] + loc[None, :]).ravel(), vals.ravel()


def _block(g: Polynomial, n: int, order: int, t: int, base: int, label: str) -> PsdBlock:
    size = monomial_count(n, order)
    iu, ju = np.triu_indices(size)
    rows, cols, var, coef = [], [], [], []
    for gamma, c in g.terms.items():
        idx = shifted_sum_index(n, order, gamma, t)[iu, ju]
        rows.append(iu)
        cols.append(ju)
        var.append(base + idx)
        coef.append(np.full(len(iu), c))
    return PsdBlock(size, np.concatenate(rows), np.concatenate(cols),
                    np.concatenate(var), np.concatenate(coef), label=label)


def assemble_outer(p: GmpProblem, r: int, direction: str,
                   cell_limit: int = DEFAULT_CELL_LIMIT) -> OuterProgram:
    """Level-``r`` relaxation of ``p`` for the given bound direction."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    t = truncation_degree(p, r)
    if p.M is not None and p.d > t:
        raise DegreeOverflow(f"cap degree {p.d} exceeds truncation degree {t}")
    scale = data_scale(p)
    q = normalize(p, scale)
    part = build_cells(q, cell_limit)
    n = p.n
    size = monomial_count(n, t)
    index = monomial_index(n, t)
    n_vars = size * len(part.cells)
    all_cells = [c.id - 1 for c in part.cells]
    sigma = np.array([max(cell.hi) for cell in part.cells], float)

    c = np.zeros(n_vars)
    pieces = payoff_pieces(q.payoff, n)
    for cell in part.cells:
        if cell.piece:
            cols, vals = _summed(pieces[cell.piece - 1].expr, [cell.id - 1], size, index, sigma)
            c[cols] += vals

    eq, ub = _Rows(), _Rows()
    for j, o in enumerate(q.options):
        f = Polynomial.variable(n, o.asset) - o.strike
        members = [i - 1 for i in part.active_sets[j + 1]]
        cols, vals = _summed(f, members, size, index, sigma)
        eq.add(cols, vals, o.price)
    for m in q.moments:
        cols, vals = _summed(m.f, all_cells, size, index, sigma)
        (eq if m.relation == "equality" else ub).add(cols, vals, m.rhs)
    cols, vals = _summed(Polynomial.constant(n, 1.0), all_cells, size, index, sigma)
    eq.add(cols, vals, 1.0)
    if q.M is not None:
        cols, vals = _summed(norm_power(n, q.d), all_cells, size, index, sigma)
        ub.add(cols, vals, q.M)

    blocks = []
    one = Polynomial.constant(n, 1.0)
    for cell in part.cells:
        base = (cell.id - 1) * size
        sig = sigma[cell.id - 1]
        blocks.append(_block(one, n, r, t, base, f"cell{cell.id}:moment"))
        for k, g in enumerate(cell_localizers(cell)):
            order = (t - g.degree) // 2
            if order < 0:
                raise DegreeOverflow(f"localizer of degree {g.degree} exceeds {t}")
            gs = g.substitute_scale(sig)
            # the block of g(sigma u) is a congruence of the block of g
            gs = gs * (1.0 / max(abs(v) for v in gs.terms.values()))
            blocks.append(_block(gs, n, order, t, base, f"cell{cell.id}:loc{k}"))

    A_eq, b_eq = eq.matrix(n_vars)
    A_ub, b_ub = ub.matrix(n_vars)
    prog = ConicProgram(
        n_vars, c, "min" if direction == "lower" else "max",
        A_eq, b_eq, A_ub, b_ub, np.ones(n_vars, bool), tuple(blocks),
    )
    return OuterProgram(prog, part, scale, t, size, sigma)


def solve_outer(p: GmpProblem, r: int, direction: str,
                settings: SolverSettings | None = None,
                cell_limit: int = DEFAULT_CELL_LIMIT) -> BoundReport:
    """Solve the level-``r`` relaxation and rescale the bound to price units."""
    start = time.perf_counter()
    outer = assemble_outer(p, r, direction, cell_limit)
    prog = outer.program
    common = dict(direction=direction, level=r, cells=len(outer.partition),
                  psd_blocks=len(prog.blocks), variables=prog.n_vars,
                  equalities=prog.n_equalities, inequalities=prog.n_inequalities,
                  strike=p.payoff.strike)
    try:
        sol = solve_conic(prog, settings)
    except (NumericalFailure, IllConditioned) as exc:
        return BoundReport(value=float("nan"), status="numerical-failure",
                           duality_gap=float("nan"),
                           wall_time=time.perf_counter() - start, message=str(exc), **common)
    usable = sol.status in ("optimal", "inaccurate")
    value = sol.objective * outer.scale if usable else float("nan")
    gap = abs(sol.primal_objective - sol.dual_objective) * outer.scale
    message = ""
    if sol.status == "inaccurate":
        message = (f"reduced accuracy: primal residual {sol.primal_residual:.1e}, "
                   f"dual residual {sol.dual_residual:.1e}")
    return BoundReport(value=value, status=sol.status, duality_gap=gap,
                       wall_time=time.perf_counter() - start, message=message, **common)


def solve_both(p: GmpProblem, r: int, settings: SolverSettings | None = None,
               cell_limit: int = DEFAULT_CELL_LIMIT) -> tuple[BoundReport, BoundReport]:
    return (solve_outer(p, r, "lower", settings, cell_limit),
            solve_outer(p, r, "upper", settings, cell_limit))


def _sweep_one(args) -> tuple[float, BoundReport | str, BoundReport | str]:
    p, K, r, settings = args
    try:
        q = p.with_strike(K)
    except GmpBoundsError as exc:
        return K, str(exc), str(exc)
    out = []
    for direction in DIRECTIONS:
        try:
            out.append(solve_outer(q, r, direction, settings))
        except GmpBoundsError as exc:
            out.append(str(exc))
    return K, out[0], out[1]


def sweep_strikes(p: GmpProblem, strikes: Sequence[float], r: int,
                  settings: SolverSettings | None = None, workers: int = 1):
    """Independent ``(K, lower, upper)`` results; a failing strike yields its error text."""
    jobs = [(p, float(K), r, settings) for K in strikes]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_one, jobs))
    return [_sweep_one(job) for job in jobs]
