from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from gmpbounds.model import load_problem_file
from gmpbounds.relaxation import assemble_outer
from gmpbounds.solver import ConicProgram, block_from_entries, export_sdpa, write_sdpa

from sdpa_reader import read_sdpa, solve_dual_with_cvxpy

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _body(text):
    return [ln for ln in text.splitlines() if not ln.startswith("*")]


def test_trivial_lp():
    prog = ConicProgram(1, [1.0], nonneg=[True])
    body = _body(export_sdpa(prog))
    assert body[:4] == ["0", "1", "-1", ""]
    assert body[4:] == ["0 1 1 1 -1"]


def test_round_trip_dimensions():
    outer = assemble_outer(load_problem_file(str(CONFIGS / "microsoft.json")), 1, "lower")
    prog = outer.program
    data = read_sdpa(export_sdpa(prog))
    lp = prog.n_vars + prog.A_ub.shape[0]
    assert data.block_sizes == [-lp] + prog.block_sizes
    assert data.block_sizes[1:] == [2] * 14
    tri = sum(k * (k + 1) // 2 for k in prog.block_sizes)
    assert data.m == prog.n_equalities + prog.A_ub.shape[0] + tri


def test_export_deterministic(tmp_path):
    outer = assemble_outer(load_problem_file(str(CONFIGS / "two_asset.json")), 1, "upper")
    a = export_sdpa(outer.program)
    path = tmp_path / "prog.dat-s"
    write_sdpa(outer.program, str(path))
    assert path.read_text() == a
    outer2 = assemble_outer(load_problem_file(str(CONFIGS / "two_asset.json")), 1, "upper")
    assert export_sdpa(outer2.program) == a


def test_small_sdp_cross_solve():
    pytest.importorskip("cvxpy")
    # min x0 + x2 over [[x0, x1], [x1, x2]] PSD with x0 = 1, x1 = 0.5, x2 = 1 -> 2
    blk = block_from_entries(2, [(0, 0, 0, 1.0), (0, 1, 1, 1.0), (1, 1, 2, 1.0)])
    prog = ConicProgram(3, [1.0, 0.0, 1.0], A_eq=np.eye(3), b_eq=[1.0, 0.5, 1.0],
                        blocks=(blk,))
    value = solve_dual_with_cvxpy(read_sdpa(export_sdpa(prog)))
    assert -value == pytest.approx(2.0, abs=1e-6)


@pytest.mark.parametrize("direction,expected", [("lower", 3.875), ("upper", 5.125)])
def test_microsoft_cross_solve(direction, expected):
    pytest.importorskip("cvxpy")
    outer = assemble_outer(load_problem_file(str(CONFIGS / "microsoft.json")), 1, direction)
    value = solve_dual_with_cvxpy(read_sdpa(export_sdpa(outer.program)))
    sign = -1.0 if outer.program.sense == "min" else 1.0
    assert sign * value * outer.scale == pytest.approx(expected, abs=1e-6)
