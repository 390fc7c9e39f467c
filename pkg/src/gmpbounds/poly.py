"""Sparse multivariate polynomials, monomial indexing and moment matrices.

Monomials are ordered graded-lexicographically everywhere in the package:
by total degree first, then by descending exponent tuple, so for two
variables the degree-2 block reads ``x1^2, x1*x2, x2^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegreeOverflow

MultiIndex = tuple[int, ...]

DROP_TOL = 1e-14


def monomial_count(n: int, r: int) -> int:
    """Number of monomials in ``n`` variables of degree at most ``r``."""
    if n < 1 or r < 0:
        raise ValueError(f"need n >= 1 and r >= 0, got n={n}, r={r}")
    return math.comb(n + r, r)


@lru_cache(maxsize=None)
def monomials(n: int, r: int) -> tuple[MultiIndex, ...]:
    """All exponent tuples of degree <= r in graded-lexicographic order."""
    out: list[MultiIndex] = []
    for deg in range(r + 1):
        for combo in combinations_with_replacement(range(n), deg):
            alpha = [0] * n
            for i in combo:
                alpha[i] += 1
            out.append(tuple(alpha))
    return tuple(out)


@lru_cache(maxsize=None)
def monomial_index(n: int, r: int) -> dict[MultiIndex, int]:
    return {alpha: i for i, alpha in enumerate(monomials(n, r))}


def _add(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(x + y for x, y in zip(a, b))


@lru_cache(maxsize=None)
def shifted_sum_index(n: int, r: int, gamma: MultiIndex, t: int) -> np.ndarray:
    """Index into the degree-``t`` basis of ``alpha + beta + gamma``.

    Rows and columns run over the degree-``r`` basis. Used to build moment
    (``gamma = 0``) and localizing matrices without Python-level loops.
    """
    basis = monomials(n, r)
    index = monomial_index(n, t)
    out = np.empty((len(basis), len(basis)), dtype=np.int64)
    for i, a in enumerate(basis):
        for j in range(i, len(basis)):
            k = index[_add(_add(a, basis[j]), gamma)]
            out[i, j] = out[j, i] = k
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Polynomial:
    """Sparse polynomial ``sum_alpha c_alpha x^alpha`` in ``n`` variables."""

    n: int
    terms: Mapping[MultiIndex, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean: dict[MultiIndex, float] = {}
        for alpha, c in self.terms.items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.n or any(a < 0 for a in alpha):
                raise ValueError(f"bad exponent {alpha} for {self.n} variables")
            if c != 0.0:
                clean[alpha] = float(c)
        object.__setattr__(self, "terms", clean)

    # constructors -------------------------------------------------------
    @classmethod
    def constant(cls, n: int, value: float) -> Polynomial:
        return cls(n, {(0,) * n: value})

    @classmethod
    def variable(cls, n: int, i: int) -> Polynomial:
        alpha = [0] * n
        alpha[i] = 1
        return cls(n, {tuple(alpha): 1.0})

    @classmethod
    def affine(cls, coeffs: Sequence[float], const: float = 0.0) -> Polynomial:
        """``sum_i coeffs[i] * x_i + const``."""
        n = len(coeffs)
        terms: dict[MultiIndex, float] = {(0,) * n: const}
        for i, a in enumerate(coeffs):
            e = [0] * n
            e[i] = 1
            terms[tuple(e)] = a
        return cls(n, terms)

    # queries ------------------------------------------------------------
    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.terms), default=0)

    def coefficient(self, alpha: Iterable[int]) -> float:
        return self.terms.get(tuple(alpha), 0.0)

    def is_zero(self) -> bool:
        return not self.terms

    def __call__(self, x: Sequence[float] | np.ndarray) -> float | np.ndarray:
        """Evaluate at one point (shape ``(n,)``) or many (shape ``(N, n)``)."""
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        out = np.zeros(pts.shape[0])
        for alpha, c in self.terms.items():
            out += c * np.prod(pts ** np.asarray(alpha), axis=1)
        return float(out[0]) if single else out

    # arithmetic ---------------------------------------------------------
    def _check(self, other: Polynomial) -> None:
        if other.n != self.n:
            raise ValueError(f"variable count mismatch: {self.n} vs {other.n}")

    def __add__(self, other: Polynomial | float) -> Polynomial:
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(self.n, float(other))
        self._check(other)
        terms = dict(self.terms)
        for alpha, c in other.terms.items():
            terms[alpha] = terms.get(alpha, 0.0) + c
        return Polynomial(self.n, {a: c for a, c in terms.items() if abs(c) >= DROP_TOL})

    __radd__ = __add__

    def __neg__(self) -> Polynomial:
        return Polynomial(self.n, {a: -c for a, c in self.terms.items()})

    def __sub__(self, other: Polynomial | float) -> Polynomial:
        return self + (-other)

    def __rsub__(self, other: float) -> Polynomial:
        return (-self) + other

    def __mul__(self, other: Polynomial | float) -> Polynomial:
        if not isinstance(other, Polynomial):
            s = float(other)
            return Polynomial(self.n, {a: s * c for a, c in self.terms.items()})
        self._check(other)
        terms: dict[MultiIndex, float] = {}
        for a, ca in self.terms.items():
            for b, cb in other.terms.items():
                k = _add(a, b)
                terms[k] = terms.get(k, 0.0) + ca * cb
        return Polynomial(self.n, {a: c for a, c in terms.items() if abs(c) >= DROP_TOL})

    __rmul__ = __mul__

    def __pow__(self, k: int) -> Polynomial:
        if k < 0:
            raise ValueError("negative power")
        out = Polynomial.constant(self.n, 1.0)
        for _ in range(k):
            out = out * self
        return out

    def substitute_scale(self, s: float) -> Polynomial:
        """Return ``q(x) = p(s * x)``."""
        return Polynomial(self.n, {a: c * s ** sum(a) for a, c in self.terms.items()})

    def __repr__(self) -> str:
        if not self.terms:
            return "Polynomial(0)"
        parts = []
        for alpha in sorted(self.terms, key=lambda a: (sum(a), tuple(-x for x in a))):
            mono = "*".join(
                f"x{i + 1}" + (f"^{e}" if e > 1 else "") for i, e in enumerate(alpha) if e
            )
            parts.append(f"{self.terms[alpha]:+g}" + (f"*{mono}" if mono else ""))
        return "Polynomial(" + " ".join(parts) + ")"


def norm_power(n: int, d: int) -> Polynomial:
    """Multinomial expansion of ``||x||_2^d`` for even ``d``."""
    if d % 2:
        raise ValueError("norm power needs an even exponent")
    sq = Polynomial(n, {tuple(2 if j == i else 0 for j in range(n)): 1.0 for i in range(n)})
    return sq ** (d // 2)


@dataclass(frozen=True)
class MomentVector:
    """Truncated moment sequence ``y_alpha`` for ``|alpha| <= t``."""

    n: int
    t: int
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.shape != (monomial_count(self.n, self.t),):
            raise ValueError(
                f"expected {monomial_count(self.n, self.t)} moments, got shape {v.shape}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_atoms(
        cls, points: Sequence[Sequence[float]], weights: Sequence[float], t: int
    ) -> MomentVector:
        """Moments of ``sum_j w_j delta_{x_j}`` up to degree ``t``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        w = np.asarray(weights, dtype=float)
        n = pts.shape[1]
        basis = np.asarray(monomials(n, t))
        vals = np.prod(pts[:, None, :] ** basis[None, :, :], axis=2).T @ w
        return cls(n, t, vals)

    def __getitem__(self, alpha: Iterable[int]) -> float:
        return float(self.values[monomial_index(self.n, self.t)[tuple(alpha)]])

    @property
    def mass(self) -> float:
        return float(self.values[0])


def riesz_apply(f: Polynomial, y: MomentVector) -> float:
    """Riesz functional ``L_y(f) = sum_alpha f_alpha y_alpha``."""
    if f.n != y.n:
        raise ValueError(f"variable count mismatch: {f.n} vs {y.n}")
    if f.degree > y.t:
        raise DegreeOverflow(f"deg f = {f.degree} exceeds truncation {y.t}")
    index = monomial_index(y.n, y.t)
    return float(sum(c * y.values[index[a]] for a, c in f.terms.items()))


def moment_matrix(y: MomentVector, r: int) -> np.ndarray:
    """Truncated moment matrix ``M_r(y)`` with entries ``y_{alpha+beta}``."""
    if 2 * r > y.t:
        raise DegreeOverflow(f"order {r} needs moments up to {2 * r}, have {y.t}")
    return y.values[shifted_sum_index(y.n, r, (0,) * y.n, y.t)]


def localizing_matrix(g: Polynomial, y: MomentVector, r: int) -> np.ndarray:
    """Localizing matrix ``M_r(g * y)`` with entries ``sum_gamma g_gamma y_{alpha+beta+gamma}``."""
    if g.n != y.n:
        raise ValueError(f"variable count mismatch: {g.n} vs {y.n}")
    if 2 * r + g.degree > y.t:
        raise DegreeOverflow(
            f"order {r} with deg g = {g.degree} needs moments up to {2 * r + g.degree}, have {y.t}"
        )
    size = monomial_count(y.n, r)
    out = np.zeros((size, size))
    for gamma, c in g.terms.items():
        out += c * y.values[shifted_sum_index(y.n, r, gamma, y.t)]
    return out
