from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from gmpbounds.model import ObservedOption, load_problem_file, problem_from_dict
from gmpbounds.relaxation import (
    assemble_outer,
    normalize,
    solve_outer,
    sweep_strikes,
    truncation_degree,
)
from gmpbounds.solver import SolverSettings, solve_conic

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TIGHT = SolverSettings(feasibility_tol=1e-10, gap_tol=1e-10)


def _load(name):
    return load_problem_file(str(CONFIGS / name))


@pytest.mark.parametrize("name,per_cell,total", [
    ("microsoft.json", 5, 35),
    ("two_asset.json", 15, 210),
    ("boyle_lin.json", 35, 140),
])
def test_truncation_and_variable_counts(name, per_cell, total):
    p = _load(name)
    assert truncation_degree(p, 1) == 4
    outer = assemble_outer(p, 1, "lower")
    assert outer.vars_per_cell == per_cell
    assert outer.program.n_vars == total


def test_microsoft_bookkeeping():
    prog = assemble_outer(_load("microsoft.json"), 1, "lower").program
    assert len(prog.blocks) == 14
    assert set(prog.block_sizes) == {2}
    assert prog.n_equalities == 6
    assert prog.n_inequalities == 36
    assert prog.A_ub.shape[0] == 1  # the moment cap


def test_two_asset_and_boyle_lin_bookkeeping():
    prog = assemble_outer(_load("two_asset.json"), 1, "upper").program
    assert prog.n_equalities == 5
    assert 3 in prog.block_sizes
    # all nine covariance entries plus three means and the mass
    prog = assemble_outer(_load("boyle_lin_full_cov.json"), 1, "upper").program
    assert prog.n_equalities == 13
    assert 4 in prog.block_sizes


@pytest.mark.parametrize("name,lower,upper,tol", [
    ("microsoft.json", 3.875, 5.125, 1e-3),
    ("two_asset.json", 2.387, 7.4, 1e-2),
])
def test_reference_values(name, lower, upper, tol):
    p = _load(name)
    lo = solve_outer(p, 1, "lower")
    up = solve_outer(p, 1, "upper")
    assert lo.status == up.status == "optimal"
    assert lo.value == pytest.approx(lower, abs=tol)
    assert up.value == pytest.approx(upper, abs=tol)
    assert lo.value <= up.value


def test_boyle_lin_k40():
    p = _load("boyle_lin.json")
    assert solve_outer(p, 1, "upper").value == pytest.approx(13.2, abs=1e-2)
    assert solve_outer(p, 1, "lower").value == pytest.approx(4.21, abs=1e-2)


@pytest.mark.parametrize("name", ["microsoft.json", "two_asset.json"])
def test_hierarchy_monotone(name):
    p = _load(name)
    lows = [solve_outer(p, r, "lower", TIGHT).value for r in (1, 2, 3)]
    ups = [solve_outer(p, r, "upper", TIGHT).value for r in (1, 2, 3)]
    assert all(b >= a - 1e-6 for a, b in zip(lows, lows[1:]))
    assert all(b <= a + 1e-6 for a, b in zip(ups, ups[1:]))


def test_normalisation_of_mass():
    outer = assemble_outer(_load("two_asset.json"), 1, "lower")
    sol = solve_conic(outer.program, TIGHT)
    y = outer.moments(sol.x)
    assert y[:, 0].sum() == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("direction", ["lower", "upper"])
def test_scaling_equivariance(direction):
    p = _load("microsoft.json")
    q = normalize(p)  # prices and strikes divided by B, box [0, 1]
    a = solve_outer(p, 1, direction, TIGHT).value
    b = solve_outer(q, 1, direction, TIGHT).value * p.B
    assert abs(a - b) <= 1e-6 * abs(a)


def test_arbitrage_violation_is_infeasible():
    p = _load("microsoft.json")
    opts = list(p.options)
    # a call at strike 110 priced above the call at 100 admits arbitrage
    opts[2] = ObservedOption(0, 110.0, 9.0)
    bad = replace(p, options=tuple(opts))
    assert solve_outer(bad, 1, "lower").status == "infeasible"


def test_price_above_intrinsic_bound_is_infeasible():
    doc = json.loads((CONFIGS / "microsoft.json").read_text())
    doc["assets"][0]["options"] = [{"strike": 100, "price": 1.0}, {"strike": 110, "price": 0.2}]
    doc["moment_constraints"] = [{"coeffs": [{"exponents": [1], "value": 1.0}], "rhs": 90.0}]
    p = problem_from_dict(doc)
    # E max(0, x - 100) >= E x - 100 is violated only when the mean exceeds 101
    assert solve_outer(p, 1, "upper").status == "optimal"
    doc["moment_constraints"][0]["rhs"] = 105.0
    assert solve_outer(problem_from_dict(doc), 1, "upper").status == "infeasible"


def test_sweep_table2():
    p = _load("table2.json")
    rows = sweep_strikes(p, [105, 115], 1)
    (k1, lo1, up1), (k2, lo2, up2) = rows
    assert (k1, k2) == (105, 115)
    assert lo1.value == pytest.approx(4.625, abs=1e-2)
    assert up1.value == pytest.approx(8.016, abs=1e-2)
    assert lo2.value == pytest.approx(0.0, abs=1e-2)
    assert up2.value == pytest.approx(2.0, abs=1e-2)


def test_sweep_reports_errors_inline():
    p = _load("microsoft.json")
    rows = sweep_strikes(p, [500, 105], 1)
    assert isinstance(rows[0][1], str)
    assert rows[1][1].value == pytest.approx(3.875, abs=1e-3)


def test_report_fields():
    r = solve_outer(_load("microsoft.json"), 1, "upper")
    assert r.ok and r.cells == 7 and r.psd_blocks == 14 and r.variables == 35
    assert r.strike == 105.0
    assert np.isfinite(r.duality_gap) and r.wall_time >= 0
