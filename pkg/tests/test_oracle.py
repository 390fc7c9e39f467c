from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from gmpbounds.errors import LPInfeasible, ValidationError
from gmpbounds.model import load_problem_file, problem_from_dict
from gmpbounds.oracle import grid_axes, lp_bound
from gmpbounds.solver import SolverSettings

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TIGHT = SolverSettings(feasibility_tol=1e-10, gap_tol=1e-10)


def _load(name):
    return load_problem_file(str(CONFIGS / name))


def test_grid_contains_strikes():
    p = _load("microsoft.json")
    (axis,) = grid_axes(p, 11)
    for k in [95, 100, 105, 110, 115, 120]:
        assert k in axis
    assert axis[0] == 0.0 and axis[-1] == p.B
    with pytest.raises(ValidationError):
        grid_axes(p, 1)


def test_microsoft_brackets():
    p = _load("microsoft.json")
    lo = lp_bound(p, 2001, "lower", TIGHT)
    up = lp_bound(p, 2001, "upper", TIGHT)
    assert 3.875 - 1e-6 <= lo <= 3.885
    assert 5.115 <= up <= 5.125 + 1e-6


def test_payoff_x_puts_mass_at_box_end():
    # phi(x) = max(0, x - 0) = x with only a loose second-moment condition
    doc = {"assets": [{"name": "x", "options": []}],
           "payoff": {"kind": "single-call", "strike": 0.0},
           "moment_constraints": [{"coeffs": [{"exponents": [2], "value": 1.0}],
                                   "rhs": 1e9, "relation": "<="}],
           "M": None, "B": 200.0}
    assert lp_bound(problem_from_dict(doc), 101, "upper", TIGHT) == pytest.approx(200.0, abs=1e-6)


def test_non_attainment_sequence():
    p = _load("nonattainment.json")  # k1 = 100, k2 = 110, a = 1, no moment cap
    a, k1, k2 = 1.0, 100.0, 110.0
    values = [lp_bound(p.with_bounds(B=B), 2001, "lower", TIGHT) for B in (200, 400, 800)]
    assert values[0] > values[1] > values[2] > a
    for B, v in zip((200, 400, 800), values):
        predicted = a + a * (k2 - k1) / (B - k2)
        assert abs((v - a) - (predicted - a)) <= 0.1 * (predicted - a)


def test_lp_infeasible_off_grid():
    # zero variance forces a single atom at 100.25, which is not a grid point
    doc = {
        "assets": [{"name": "x", "options": [{"strike": 100.0, "price": 0.25}]}],
        "payoff": {"kind": "single-call", "strike": 105.0},
        "moment_constraints": [
            {"coeffs": [{"exponents": [1], "value": 1.0}], "rhs": 100.25},
            {"coeffs": [{"exponents": [2], "value": 1.0}], "rhs": 100.25**2,
             "relation": "<="},
        ],
        "M": None, "B": 400.0,
    }
    with pytest.raises(LPInfeasible):
        lp_bound(problem_from_dict(doc), 101, "lower", TIGHT)


def test_asset_limit():
    with pytest.raises(ValidationError):
        lp_bound(_load("boyle_lin.json"), 5, "upper")


def test_refinement_improves():
    p = _load("microsoft_subset.json")
    coarse = lp_bound(p, 101, "lower", TIGHT)
    fine = lp_bound(p, 201, "lower", TIGHT)  # nests the coarse grid
    assert fine <= coarse + 1e-9
    assert np.isfinite(fine)
