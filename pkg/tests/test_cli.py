from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import pytest

from gmpbounds.cli import main
from gmpbounds.model import load_problem_file
from gmpbounds.relaxation import solve_outer

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
MSFT = str(CONFIGS / "microsoft.json")


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_bound_table(capsys):
    code, out = run(capsys, "bound", "--config", MSFT, "--level", "1", "--direction", "both")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split()[:4] == ["K", "direction", "level", "value"]
    assert lines[2].split()[1:4] == ["lower", "1", "3.875"]
    assert lines[3].split()[1:4] == ["upper", "1", "5.125"]


def test_bound_csv_byte_stable(capsys):
    args = ("bound", "--config", MSFT, "--emit", "csv", "--no-timing")
    code1, out1 = run(capsys, *args)
    code2, out2 = run(capsys, *args)
    assert code1 == code2 == 0
    assert out1 == out2


def test_bound_csv_matches_report(capsys):
    code, out = run(capsys, "bound", "--config", MSFT, "--emit", "csv", "--no-timing")
    assert code == 0
    p = load_problem_file(MSFT)
    for row in _rows(out):
        rep = solve_outer(p, 1, row["direction"])
        assert float(row["value"]) == pytest.approx(rep.value, rel=1e-5)
        assert row["status"] == rep.status
        assert int(row["cells"]) == rep.cells == 7
        assert int(row["variables"]) == 35
        assert int(row["psd_blocks"]) == 14
        assert int(row["equalities"]) == 6
        assert int(row["inequalities"]) == 36
        assert float(row["K"]) == 105


def test_sweep_table2(capsys):
    code, out = run(capsys, "sweep", "--config", str(CONFIGS / "table2.json"),
                    "--strikes", "90,95,100,105,110,115", "--no-timing")
    assert code == 0
    rows = _rows(out)
    expected = [(16.875, 20.25), (12.792, 15.7), (8.708, 11.55), (4.625, 8.016),
                (1.675, 4.75), (0.0, 2.0)]
    assert len(rows) == 6
    for row, (lo, up) in zip(rows, expected):
        assert float(row["lower"]) == pytest.approx(lo, abs=1e-2)
        assert float(row["upper"]) == pytest.approx(up, abs=1e-2)


def test_arbitrage_violation_exit_3(capsys, tmp_path):
    doc = json.loads(Path(MSFT).read_text())
    doc["assets"][0]["options"][2]["price"] = 9.0  # C(110) > C(100)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    code, _ = run(capsys, "bound", "--config", str(path))
    assert code == 3


def test_validation_exit_1(capsys, tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{")
    assert run(capsys, "bound", "--config", str(path))[0] == 1
    assert run(capsys, "bound", "--config", MSFT, "--B", "50")[0] == 1
    assert run(capsys, "sweep", "--config", MSFT, "--strikes", "a,b")[0] == 1


def test_solver_failure_exit_2(capsys):
    assert run(capsys, "bound", "--config", MSFT, "--max-iterations", "2")[0] == 2


def test_inner_commands(capsys):
    subset = str(CONFIGS / "microsoft_subset.json")
    code, out = run(capsys, "inner", "--config", subset, "--level", "2", "--emit", "csv",
                    "--no-timing")
    assert code == 0
    rows = _rows(out)
    assert [r["direction"] for r in rows] == ["lower", "upper"]
    assert float(rows[0]["epsilon"]) == pytest.approx(0.028, abs=1e-3)
    code, _ = run(capsys, "inner", "--config", subset, "--level", "2", "--eps", "0.001")
    assert code == 3


def test_oracle_command(capsys):
    code, out = run(capsys, "oracle", "--config", MSFT, "--grid", "401", "--emit", "csv")
    assert code == 0
    rows = _rows(out)
    assert float(rows[0]["value"]) >= 3.875 - 1e-6
    assert float(rows[1]["value"]) <= 5.125 + 1e-6
    code, _ = run(capsys, "oracle", "--config", str(CONFIGS / "boyle_lin.json"))
    assert code == 1


def test_suggest_b(capsys):
    code, out = run(capsys, "suggest-b", "--config", MSFT, "--emit", "csv")
    assert code == 0
    rows = {r["item"]: float(r["value"]) for r in _rows(out)}
    assert rows["B (with 1% margin)"] == pytest.approx(807879, abs=1)
    assert rows["configured B"] == 400
    assert run(capsys, "suggest-b", "--config", str(CONFIGS / "boyle_lin.json"))[0] == 1


def test_dump_cells(capsys, tmp_path):
    code, out = run(capsys, "dump-cells", "--config", str(CONFIGS / "two_asset.json"))
    assert code == 0
    assert len(_rows(out)) == 14
    target = tmp_path / "cells.csv"
    run(capsys, "dump-cells", "--config", MSFT, "--normalized", "-o", str(target))
    rows = _rows(target.read_text())
    assert float(rows[-1]["hi1"]) == 1.0


def test_export_sdpa(capsys, tmp_path):
    target = tmp_path / "ms.dat-s"
    code, _ = run(capsys, "bound", "--config", MSFT, "--export-sdpa", str(target))
    assert code == 0
    assert (tmp_path / "ms-lower.dat-s").exists()
    assert (tmp_path / "ms-upper.dat-s").exists()
