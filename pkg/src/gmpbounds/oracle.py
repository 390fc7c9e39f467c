"""Brute-force check: optimise over atomic measures on a fixed grid.

Restricting the measure to weights on finitely many grid points turns the
bound problem into a linear program. Its value is attainable, so it can
only be worse than the true bound: the LP minimum is at least the true
infimum and the LP maximum at most the true supremum.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import LPInfeasible, NumericalFailure, ValidationError
from .model import GmpProblem
from .relaxation import data_scale
from .solver import ConicProgram, SolverSettings, solve_conic

MAX_ASSETS = 2


def grid_axes(p: GmpProblem, points_per_axis: int) -> list[np.ndarray]:
    """Uniform points on ``[0, B]`` per asset plus that asset's strikes and ``K``."""
    if points_per_axis < 2:
        raise ValidationError("points_per_axis must be >= 2")
    axes = []
    for asset in range(p.n):
        extra = [k for k in p.strikes(asset) + [p.payoff.strike] if 0 <= k <= p.B]
        axes.append(np.unique(np.concatenate([np.linspace(0.0, p.B, points_per_axis), extra])))
    return axes


def grid_points(p: GmpProblem, points_per_axis: int) -> np.ndarray:
    axes = grid_axes(p, points_per_axis)
    return np.array(list(itertools.product(*axes)), dtype=float)


def lp_bound(p: GmpProblem, points_per_axis: int, direction: str,
             settings: SolverSettings | None = None,
             max_assets: int = MAX_ASSETS) -> float:
    """Optimal value of the grid LP in price units.

    Raises :class:`LPInfeasible` when no weights on the grid satisfy the
    data; a finer grid may help.
    """
    if direction not in ("lower", "upper"):
        raise ValueError("direction must be 'lower' or 'upper'")
    if p.n > max_assets:
        raise ValidationError(f"grid oracle is limited to {max_assets} assets (got {p.n})")
    pts = grid_points(p, points_per_axis)
    s = data_scale(p)
    u = pts / s  # same normalisation as the relaxations
    rows, rhs = [], []
    for o in p.options:
        rows.append(np.maximum(0.0, u[:, o.asset] - o.strike / s))
        rhs.append(o.price / s)
    ub_rows, ub_rhs = [], []
    for m in p.moments:
        f = m.f.substitute_scale(s) * (1.0 / s ** m.f.degree)
        target = rows if m.relation == "equality" else ub_rows
        (rhs if m.relation == "equality" else ub_rhs).append(m.rhs / s ** m.f.degree)
        target.append(f(u))
    rows.append(np.ones(len(u)))
    rhs.append(1.0)
    if p.M is not None:
        ub_rows.append(np.linalg.norm(u, axis=1) ** p.d)
        ub_rhs.append(p.M / s ** p.d)

    c = p.payoff.evaluate(pts) / s
    prog = ConicProgram(
        len(u), c, "min" if direction == "lower" else "max",
        A_eq=np.array(rows), b_eq=np.array(rhs),
        A_ub=np.array(ub_rows) if ub_rows else None,
        b_ub=np.array(ub_rhs) if ub_rows else None,
        nonneg=np.ones(len(u), bool),
    )
    sol = solve_conic(prog, settings)
    if sol.status == "infeasible":
        raise LPInfeasible(f"no atomic measure on the {points_per_axis}-point grid fits the data")
    if sol.status not in ("optimal", "inaccurate"):
        raise NumericalFailure(f"grid LP ended with status {sol.status}")
    return sol.objective * s
