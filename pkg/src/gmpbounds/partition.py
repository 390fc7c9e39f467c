"""Partition of ``[0, B]^n`` into cells on which every max-term is affine.

The grid is the product of per-asset strike cuts. Each grid box is then
intersected with every payoff region (the zero region and one region per
payoff piece); intersections without interior are dropped, and cutting
planes that do not cross a box are removed from its description.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import PartitionOverflow, ValidationError
from .model import GmpProblem, Halfspace, ObservedOption, PayoffSpec, payoff_pieces
from .poly import Polynomial

DEFAULT_CELL_LIMIT = 10**6
REL_TOL = 1e-9


@dataclass(frozen=True)
class Region:
    """Axis bounds plus halfspaces; ``piece`` is 0 for the zero region."""

    piece: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    halfspaces: tuple[Halfspace, ...]


@dataclass(frozen=True)
class Cell:
    id: int
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    halfspaces: tuple[Halfspace, ...]
    piece: int  # active payoff piece (1-based), 0 if the payoff vanishes
    active_options: frozenset[int]  # indices into problem.options
    point: tuple[float, ...]  # interior representative

    @property
    def n(self) -> int:
        return len(self.lo)


@dataclass(frozen=True)
class Partition:
    cells: tuple[Cell, ...]
    active_sets: tuple[frozenset[int], ...]  # J_0 (objective), J_1..J_N (options)
    B: float

    def __len__(self) -> int:
        return len(self.cells)


def payoff_regions(payoff: PayoffSpec, n: int, B: float) -> list[Region]:
    """Zero region followed by the activation region of each payoff piece."""
    K = payoff.strike
    full = (B,) * n
    zero = (0.0,) * n
    pieces = payoff_pieces(payoff, n)
    if payoff.kind == "weighted-basket":
        hs = pieces[0].halfspaces[0]
        flip = Halfspace(tuple(-a for a in hs.a), -hs.c)
        regions = [Region(0, zero, full, (flip,))]
    elif payoff.kind == "single-call":
        regions = [Region(0, zero, (K,) + full[1:], ())]
    else:
        regions = [Region(0, zero, (K,) * n, ())]
    for j, piece in enumerate(pieces, start=1):
        regions.append(Region(j, piece.lower, full, piece.halfspaces))
    return regions


def _chebyshev(lo, hi, halfspaces) -> tuple[float, np.ndarray]:
    """Radius and centre of the largest ball inside box and halfspaces."""
    n = len(lo)
    # variables: x (n), r; maximise r
    c = np.zeros(n + 1)
    c[-1] = -1.0
    rows, rhs = [], []
    for i in range(n):
        e = np.zeros(n + 1)
        e[i], e[-1] = -1.0, 1.0  # lo_i + r <= x_i
        rows.append(e)
        rhs.append(-lo[i])
        e = np.zeros(n + 1)
        e[i], e[-1] = 1.0, 1.0  # x_i + r <= hi_i
        rows.append(e)
        rhs.append(hi[i])
    for h in halfspaces:
        a = np.asarray(h.a)
        rows.append(np.r_[-a, np.linalg.norm(a)])  # a.x - c >= r |a|
        rhs.append(-h.c)
    res = linprog(
        c, A_ub=np.array(rows), b_ub=np.array(rhs),
        bounds=[(None, None)] * n + [(None, None)], method="highs",
    )
    if res.status != 0:
        return -np.inf, np.zeros(n)
    return float(res.x[-1]), res.x[:n]


def _clip_region(lo, hi, region: Region, B: float):
    """Intersect a grid box with a region; ``None`` when the interior is empty."""
    tol = REL_TOL * B
    lo = tuple(max(a, b) for a, b in zip(lo, region.lower))
    hi = tuple(min(a, b) for a, b in zip(hi, region.upper))
    if any(h - l < tol for l, h in zip(lo, hi)):
        return None
    kept = []
    for hs in region.halfspaces:
        a = np.asarray(hs.a)
        vmin = np.minimum(a * lo, a * hi).sum() - hs.c
        vmax = np.maximum(a * lo, a * hi).sum() - hs.c
        if vmax <= tol:
            return None
        if vmin < -tol:
            kept.append(hs)
    if not kept:
        return lo, hi, (), tuple((l + h) / 2 for l, h in zip(lo, hi))
    radius, centre = _chebyshev(lo, hi, kept)
    if radius <= tol:
        return None
    return lo, hi, tuple(kept), tuple(float(x) for x in centre)


def enumerate_cells(
    B: float,
    cuts: Sequence[Sequence[float]],
    regions: Sequence[Region],
    options: Sequence[ObservedOption],
    limit: int = DEFAULT_CELL_LIMIT,
) -> Partition:
    axes = []
    for ax in cuts:
        pts = sorted({float(k) for k in ax if 0.0 < k < B})
        edges = [0.0] + pts + [float(B)]
        axes.append(list(zip(edges[:-1], edges[1:])))
    raw = []
    for box in itertools.product(*axes):
        lo = tuple(b[0] for b in box)
        hi = tuple(b[1] for b in box)
        for region in regions:
            clipped = _clip_region(lo, hi, region, B)
            if clipped is None:
                continue
            raw.append((lo, region.piece, clipped))
            if len(raw) > limit:
                raise PartitionOverflow(f"more than {limit} cells")
    raw.sort(key=lambda item: (item[0], item[1]))

    cells = []
    n_opt = len(options)
    active = [set() for _ in range(n_opt + 1)]
    for cid, (_, piece, (lo, hi, hs, point)) in enumerate(raw, start=1):
        opts = frozenset(j for j, o in enumerate(options) if point[o.asset] > o.strike)
        cells.append(Cell(cid, lo, hi, hs, piece, opts, point))
        if piece:
            active[0].add(cid)
        for j in opts:
            active[j + 1].add(cid)
    return Partition(tuple(cells), tuple(frozenset(s) for s in active), float(B))


def build_cells(p: GmpProblem, limit: int = DEFAULT_CELL_LIMIT) -> Partition:
    """Cells of ``[0, B]^n`` for problem ``p`` with their active index sets."""
    cuts = [p.strikes(a) for a in range(p.n)]
    regions = payoff_regions(p.payoff, p.n, p.B)
    return enumerate_cells(p.B, cuts, regions, p.options, limit)


def segment_univariate(strikes: Sequence[float], K: float, B: float) -> Partition:
    """Intervals of ``[0, B]`` cut at every strike and at ``K``."""
    if any(k >= B for k in strikes) or not 0 <= K < B:
        raise ValidationError("strikes and K must lie below B")
    options = [ObservedOption(0, float(k), 0.0) for k in strikes]
    regions = payoff_regions(PayoffSpec("single-call", float(K)), 1, B)
    return enumerate_cells(B, [list(strikes)], regions, options)


def cell_localizers(c: Cell) -> list[Polynomial]:
    """Polynomials ``h >= 0`` describing the cell: box products, then halfspaces."""
    n = c.n
    out = []
    for i in range(n):
        xi = Polynomial.variable(n, i)
        out.append((c.hi[i] - xi) * (xi - c.lo[i]))
    out.extend(h.polynomial() for h in c.halfspaces)
    return out


def cells_to_csv(part: Partition) -> str:
    """One row per cell: id, bounds, halfspaces, active piece and options."""
    n = part.cells[0].n if part.cells else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["id"]
    for i in range(n):
        header += [f"lo{i + 1}", f"hi{i + 1}"]
    w.writerow(header + ["halfspaces", "piece", "active_options"])
    for c in part.cells:
        row: list[object] = [c.id]
        for l, h in zip(c.lo, c.hi):
            row += [f"{l:.10g}", f"{h:.10g}"]
        hs = ";".join(" ".join(f"{a:.10g}" for a in h.a) + f" >= {h.c:.10g}" for h in c.halfspaces)
        opts = " ".join(str(j + 1) for j in sorted(c.active_options))
        w.writerow(row + [hs, c.piece, opts])
    return buf.getvalue()
