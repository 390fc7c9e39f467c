from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np
import pytest

from gmpbounds.errors import PartitionOverflow
from gmpbounds.model import load_problem_file
from gmpbounds.partition import (
    build_cells,
    cell_localizers,
    cells_to_csv,
    segment_univariate,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _load(name):
    return load_problem_file(str(CONFIGS / name))


def _intervals(part):
    return [(c.lo[0], c.hi[0]) for c in part.cells]


def test_segment_univariate_examples():
    assert len(segment_univariate([95, 100, 110, 115, 120], 105, 400)) == 7
    assert _intervals(segment_univariate([], 105, 400)) == [(0, 105), (105, 400)]
    assert _intervals(segment_univariate([100, 110], 105, 400)) == [
        (0, 100), (100, 105), (105, 110), (110, 400)]


def test_microsoft_matches_univariate():
    p = _load("microsoft.json")
    part = build_cells(p)
    assert len(part) == 7
    uni = segment_univariate(p.strikes(0), p.payoff.strike, p.B)
    assert _intervals(part) == _intervals(uni)
    assert part.active_sets == uni.active_sets
    # payoff active on [105, 110], [110, 115], [115, 120], [120, 400]
    assert part.active_sets[0] == frozenset({4, 5, 6, 7})


def test_two_asset_active_sets():
    part = build_cells(_load("two_asset.json"))
    assert len(part) == 14
    expected = [
        {4, 6, 8, 10, 12, 13, 14},
        set(range(5, 15)),
        set(range(11, 15)),
        {2, 3, 4, 7, 8, 9, 10, 13, 14},
        {3, 4, 9, 10, 14},
    ]
    assert [set(s) for s in part.active_sets] == expected


def test_tile_12_localizers():
    p = _load("two_asset.json")
    cell = build_cells(p).cells[11]
    assert cell.lo == (110.0, 0.0) and cell.hi == (400.0, 102.0)
    locs = cell_localizers(cell)
    assert len(locs) == 3
    pt = np.array(cell.point)
    for g in locs:
        assert g(pt) > 0
    assert locs[2](np.array([110.0, 100.0])) == pytest.approx(0.5 * 210 - 105)


def test_univariate_localizer():
    cell = segment_univariate([100], 105, 400).cells[1]
    (g,) = cell_localizers(cell)
    x = np.array([[100.0], [102.0], [105.0]])
    np.testing.assert_allclose(g(x), [0.0, 3 * 2, 0.0])


def test_full_box_localizers():
    p = _load("boyle_lin.json")
    part = build_cells(p)
    zero = [c for c in part.cells if c.piece == 0]
    assert len(zero) == 1
    assert len(cell_localizers(zero[0])) == p.n


def test_boyle_lin_four_cells():
    part = build_cells(_load("boyle_lin.json"))
    assert len(part) == 4
    assert sorted(c.piece for c in part.cells) == [0, 1, 2, 3]


@pytest.mark.parametrize("name", ["microsoft.json", "two_asset.json", "currency.json",
                                  "boyle_lin.json"])
def test_coverage_and_sign_constancy(name):
    p = _load(name)
    part = build_cells(p)
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, p.B, (10_000, p.n))

    def inside(cell, x, strict):
        lo, hi = np.array(cell.lo), np.array(cell.hi)
        ok = np.all((x > lo) & (x < hi), axis=1) if strict else np.all((x >= lo) & (x <= hi), axis=1)
        for hs in cell.halfspaces:
            v = hs.value(x)
            ok &= v > 0 if strict else v >= -1e-9 * p.B
        return ok

    closure = sum(inside(c, pts, False).astype(int) for c in part.cells)
    interior = sum(inside(c, pts, True).astype(int) for c in part.cells)
    assert closure.min() >= 1
    assert interior.max() <= 1

    # the payoff and every option payoff are affine on each cell
    for cell in part.cells:
        lo, hi = np.array(cell.lo), np.array(cell.hi)
        sample = rng.uniform(lo, hi, (2000, p.n))
        sample = sample[inside(cell, sample, True)][:100]
        if not len(sample):
            continue
        active = p.payoff.evaluate(sample) > 0
        assert set(active) == {cell.piece != 0}
        for j, o in enumerate(p.options):
            signs = sample[:, o.asset] > o.strike
            assert set(signs) == {j in cell.active_options}


def test_tech_cell_count_lower_bound():
    part = build_cells(_load("tech.json"))
    assert len(part) >= 6**4


def test_cell_limit():
    with pytest.raises(PartitionOverflow):
        build_cells(_load("tech.json"), limit=100)


def test_cells_csv_deterministic():
    part = build_cells(_load("two_asset.json"))
    text = cells_to_csv(part)
    assert text == cells_to_csv(build_cells(_load("two_asset.json")))
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0][:5] == ["id", "lo1", "hi1", "lo2", "hi2"]
    assert len(rows) == 15
    assert [int(r[0]) for r in rows[1:]] == list(range(1, 15))
