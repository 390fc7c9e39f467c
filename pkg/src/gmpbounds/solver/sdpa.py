"""Export of conic programs in the SDPA sparse format (``.dat-s``).

SDPA solves the pair

    (P)  min  sum_i b_i y_i   s.t.  sum_i F_i y_i - F_0 = X >= 0
    (D)  max  F_0 . Y         s.t.  F_i . Y = b_i,  Y >= 0

and the program is written as (D). The variables of the program become
entries of ``Y``: nonnegative variables are diagonal entries of an LP
block, free variables are split into two such entries, and every explicit
inequality row receives its own slack entry. Each PSD block gets a matrix
variable of its own, tied to the program variables by one equality per
upper-triangle entry.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .program import ConicProgram


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def export_sdpa(prog: ConicProgram) -> str:
    """SDPA sparse text for ``prog``; deterministic for identical input."""
    n = prog.n_vars
    # LP block layout: one entry per nonnegative variable, two per free one
    pos = np.full(n, -1, np.int64)
    neg = np.full(n, -1, np.int64)
    k = 0
    for j in range(n):
        pos[j] = k
        k += 1
        if not prog.nonneg[j]:
            neg[j] = k
            k += 1
    n_ub = prog.A_ub.shape[0]
    slack0 = k
    lp_size = k + n_ub

    has_lp = lp_size > 0
    psd_blk0 = 2 if has_lp else 1
    # entries[(matno, blkno, i, j)] -> value
    entries: dict[tuple[int, int, int, int], float] = defaultdict(float)

    def put_var(matno: int, j: int, coef: float) -> None:
        entries[(matno, 1, pos[j] + 1, pos[j] + 1)] += coef
        if neg[j] >= 0:
            entries[(matno, 1, neg[j] + 1, neg[j] + 1)] -= coef

    sign = -1.0 if prog.sense == "min" else 1.0  # (D) maximises
    for j in np.flatnonzero(prog.c):
        put_var(0, int(j), sign * prog.c[j])

    rhs: list[float] = []
    A_eq = prog.A_eq.tocsr()
    for i in range(A_eq.shape[0]):
        m = len(rhs) + 1
        for j, v in zip(A_eq.indices[A_eq.indptr[i]:A_eq.indptr[i + 1]],
                        A_eq.data[A_eq.indptr[i]:A_eq.indptr[i + 1]]):
            put_var(m, int(j), float(v))
        rhs.append(float(prog.b_eq[i]))
    A_ub = prog.A_ub.tocsr()
    for i in range(n_ub):
        m = len(rhs) + 1
        for j, v in zip(A_ub.indices[A_ub.indptr[i]:A_ub.indptr[i + 1]],
                        A_ub.data[A_ub.indptr[i]:A_ub.indptr[i + 1]]):
            put_var(m, int(j), float(v))
        entries[(m, 1, slack0 + i + 1, slack0 + i + 1)] += 1.0
        rhs.append(float(prog.b_ub[i]))

    for b, blk in enumerate(prog.blocks):
        blkno = psd_blk0 + b
        by_entry: dict[tuple[int, int], list[tuple[int, float]]] = defaultdict(list)
        for r, c, v, coef in zip(blk.rows, blk.cols, blk.var, blk.coef):
            by_entry[(int(r), int(c))].append((int(v), float(coef)))
        const = blk.const
        for r in range(blk.size):
            for c in range(r, blk.size):
                terms = by_entry.get((r, c), [])
                f0 = 0.0 if const is None else float(const[r, c])
                m = len(rhs) + 1
                # Y[r, c] - sum coef x = F0[r, c]; F . Y counts off-diagonals twice
                entries[(m, blkno, r + 1, c + 1)] += 1.0 if r == c else 0.5
                for v, coef in terms:
                    put_var(m, v, -coef)
                rhs.append(f0)

    block_sizes = ([-lp_size] if has_lp else []) + [blk.size for blk in prog.blocks]
    lines = [
        "* conic program in SDPA dual form",
        f"* objective: original = {sign:+g} * (SDPA dual objective) + {_fmt(prog.offset)}",
        f"* variables {n}, LP block {lp_size}, PSD blocks {len(prog.blocks)}",
        str(len(rhs)),
        str(len(block_sizes)),
        " ".join(str(s) for s in block_sizes),
        " ".join(_fmt(v) for v in rhs),
    ]
    for key in sorted(entries):
        v = entries[key]
        if v != 0.0:
            matno, blkno, i, j = key
            lines.append(f"{matno} {blkno} {i} {j} {_fmt(v)}")
    return "\n".join(lines) + "\n"


def write_sdpa(prog: ConicProgram, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(export_sdpa(prog))
