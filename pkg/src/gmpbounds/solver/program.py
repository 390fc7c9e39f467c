"""Container for block conic programs.

A program has real variables ``x`` and reads

    minimise (or maximise)  c . x + offset
    subject to              A_eq x  = b_eq
                            A_ub x <= b_ub
                            x_i >= 0            for i with nonneg[i]
                            F0_k + sum_j x_j F_jk  is PSD for every block k.

Each PSD block stores its upper triangle as coordinate triples
``(row, col, var, coef)``: entry ``(row, col)`` (and its mirror) receives
``coef * x[var]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class PsdBlock:
    size: int
    rows: np.ndarray
    cols: np.ndarray
    var: np.ndarray
    coef: np.ndarray
    const: np.ndarray | None = None
    label: str = ""

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        # store with row <= col so the upper triangle is canonical
        lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
        object.__setattr__(self, "rows", lo)
        object.__setattr__(self, "cols", hi)
        object.__setattr__(self, "var", np.asarray(self.var, dtype=np.int64))
        object.__setattr__(self, "coef", np.asarray(self.coef, dtype=float))
        if not (len(lo) == len(self.var) == len(self.coef)):
            raise ValueError("block triples have inconsistent lengths")
        if len(lo) and (lo.min() < 0 or hi.max() >= self.size):
            raise ValueError("block entry outside the matrix")
        if self.const is not None:
            c = np.asarray(self.const, dtype=float)
            if c.shape != (self.size, self.size) or not np.allclose(c, c.T):
                raise ValueError("block constant must be a symmetric matrix")
            object.__setattr__(self, "const", c)

    def variables(self) -> np.ndarray:
        return np.unique(self.var)

    def coefficient_tensor(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct variables and the matrix ``F_j`` multiplying each of them."""
        vars_, local = np.unique(self.var, return_inverse=True)
        F = np.zeros((len(vars_), self.size, self.size))
        np.add.at(F, (local, self.rows, self.cols), self.coef)
        off = self.rows != self.cols
        np.add.at(F, (local[off], self.cols[off], self.rows[off]), self.coef[off])
        return vars_, F

    def matrix(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the affine matrix at the point ``x``."""
        X = np.zeros((self.size, self.size)) if self.const is None else self.const.copy()
        vals = self.coef * np.asarray(x)[self.var]
        np.add.at(X, (self.rows, self.cols), vals)
        off = self.rows != self.cols
        np.add.at(X, (self.cols[off], self.rows[off]), vals[off])
        return X


def _as_csr(a, n: int) -> sp.csr_matrix:
    if a is None:
        return sp.csr_matrix((0, n))
    m = sp.csr_matrix(a, dtype=float)
    if m.shape[1] != n:
        raise ValueError(f"constraint matrix has {m.shape[1]} columns, expected {n}")
    return m


@dataclass(frozen=True)
class ConicProgram:
    n_vars: int
    c: np.ndarray
    sense: str = "min"
    A_eq: sp.csr_matrix | None = None
    b_eq: np.ndarray | None = None
    A_ub: sp.csr_matrix | None = None
    b_ub: np.ndarray | None = None
    nonneg: np.ndarray | None = None
    blocks: tuple[PsdBlock, ...] = field(default=())
    offset: float = 0.0

    def __post_init__(self) -> None:
        n = self.n_vars
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        c = np.asarray(self.c, dtype=float)
        if c.shape != (n,):
            raise ValueError("objective has the wrong length")
        object.__setattr__(self, "c", c)
        A_eq = _as_csr(self.A_eq, n)
        A_ub = _as_csr(self.A_ub, n)
        b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float)
        b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, dtype=float)
        if b_eq.shape != (A_eq.shape[0],) or b_ub.shape != (A_ub.shape[0],):
            raise ValueError("right-hand side length does not match its matrix")
        nonneg = np.zeros(n, bool) if self.nonneg is None else np.asarray(self.nonneg, bool)
        if nonneg.shape != (n,):
            raise ValueError("nonneg mask has the wrong length")
        for blk in self.blocks:
            if len(blk.var) and (blk.var.min() < 0 or blk.var.max() >= n):
                raise ValueError(f"block {blk.label!r} references a missing variable")
        for name, val in (("A_eq", A_eq), ("b_eq", b_eq), ("A_ub", A_ub), ("b_ub", b_ub),
                          ("nonneg", nonneg), ("blocks", tuple(self.blocks))):
            object.__setattr__(self, name, val)
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A_eq.data))
                and np.all(np.isfinite(b_eq)) and np.all(np.isfinite(A_ub.data))
                and np.all(np.isfinite(b_ub))):
            raise ValueError("program data must be finite")

    @property
    def n_equalities(self) -> int:
        return self.A_eq.shape[0]

    @property
    def n_inequalities(self) -> int:
        """Explicit inequality rows plus variable sign constraints."""
        return self.A_ub.shape[0] + int(self.nonneg.sum())

    @property
    def block_sizes(self) -> list[int]:
        return [b.size for b in self.blocks]

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x + self.offset)

    def violation(self, x: np.ndarray) -> float:
        """Largest constraint violation at ``x`` (PSD blocks by least eigenvalue)."""
        v = [0.0]
        if self.n_equalities:
            v.append(float(np.abs(self.A_eq @ x - self.b_eq).max()))
        if self.A_ub.shape[0]:
            v.append(float(np.max(self.A_ub @ x - self.b_ub)))
        if self.nonneg.any():
            v.append(float(-x[self.nonneg].min()))
        for blk in self.blocks:
            v.append(float(-np.linalg.eigvalsh(blk.matrix(x))[0]))
        return max(v)


def block_from_entries(size: int, entries: Sequence[tuple[int, int, int, float]],
                       label: str = "", const: np.ndarray | None = None) -> PsdBlock:
    """Convenience constructor from ``(row, col, var, coef)`` tuples."""
    if entries:
        r, c, v, k = zip(*entries)
    else:
        r = c = v = k = ()
    return PsdBlock(size, np.array(r, np.int64), np.array(c, np.int64),
                    np.array(v, np.int64), np.array(k, float), const, label)
