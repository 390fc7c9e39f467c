"""Inner range from SOS densities against the exponential reference measure.

The unknown measure is replaced by ``h(x) dnu(x)`` with
``dnu = exp(-sum x_i) dx`` on the nonnegative orthant and ``h`` a
sum-of-squares polynomial of degree ``2r``, parameterised by a PSD Gram
matrix in a monomial or Laguerre basis. Every data constraint is relaxed to
``|integral - rhs| <= eps``, the mass constraint included.

All integrals reduce to one-dimensional tail moments
``int_k^inf x^m e^{-x} dx``. They are evaluated exactly in rational
arithmetic up to the final factor ``e^{-k}``, which keeps the high-degree
Laguerre products (whose monomial expansions cancel heavily) accurate.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import IllConditioned, InfeasibleAtCap, NumericalFailure, ValidationError
from .model import GmpProblem
from .poly import MultiIndex, Polynomial, monomials
from .relaxation import BoundReport
from .solver import ConicProgram, PsdBlock, SolverSettings, solve_conic

BASES = ("laguerre", "monomial")
EPS_START = 0.1
EPS_CAP = 1e6
EPS_TOL = 1e-5


@dataclass(frozen=True)
class InnerInstance:
    """``problem`` at SOS level ``r`` with constraint slack ``epsilon``.

    The data are divided by ``scale`` (default: the largest strike). With
    ``scaled_mass`` the mass target is divided as well, i.e. it becomes
    ``1 / scale`` like every other right-hand side.
    """

    problem: GmpProblem
    r: int
    epsilon: float = 0.0
    basis: str = "laguerre"
    scale: float | None = None
    scaled_mass: bool = True

    def __post_init__(self) -> None:
        if self.r < 1:
            raise ValidationError("SOS level r must be >= 1")
        if not self.epsilon >= 0:
            raise ValidationError("epsilon must be >= 0")
        if self.basis not in BASES:
            raise ValidationError(f"basis must be one of {BASES}")
        if self.scale is not None and not self.scale > 0:
            raise ValidationError("scale must be positive")

    @property
    def data_scale(self) -> float:
        if self.scale is not None:
            return float(self.scale)
        p = self.problem
        strikes = [o.strike for o in p.options] + [p.payoff.strike]
        return max(strikes) if max(strikes) > 0 else 1.0


# -- closed-form reference moments ------------------------------------------

def exp_tail_moment(m: int, k: float) -> float:
    """``int_k^inf x^m e^{-x} dx = e^{-k} sum_{l<=m} m!/l! k^l``.

    Uses the recursion ``T(m) = k^m e^{-k} + m T(m-1)``, whose terms are all
    positive, so no factorial is formed explicitly.
    """
    if m < 0 or int(m) != m:
        raise ValueError("exponent must be a nonnegative integer")
    if k < 0:
        raise ValueError("lower limit must be nonnegative")
    ek = math.exp(-k)
    t = ek
    for j in range(1, int(m) + 1):
        t = k ** j * ek + j * t
        if not math.isfinite(t):
            raise OverflowError(f"tail moment of order {m} exceeds the float range")
    return t


def laguerre_coefficients(m: int) -> Polynomial:
    """``L_m(x) = sum_i C(m, i) (-1)^i / i! x^i`` as a univariate polynomial."""
    return Polynomial(1, {(i,): float(c) for i, c in enumerate(_laguerre_exact(m))})


@lru_cache(maxsize=None)
def _laguerre_exact(m: int) -> tuple[Fraction, ...]:
    if m < 0:
        raise ValueError("degree must be nonnegative")
    return tuple(Fraction(math.comb(m, i) * (-1) ** i, math.factorial(i)) for i in range(m + 1))


def _poly_mul(a: Sequence[Fraction], b: Sequence[Fraction]) -> list[Fraction]:
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, u in enumerate(a):
        if u:
            for j, v in enumerate(b):
                out[i + j] += u * v
    return out


def _tail_poly_value(m: int, k: Fraction) -> Fraction:
    """``sum_{l<=m} m!/l! k^l``, i.e. the tail moment without ``e^{-k}``."""
    total, term = Fraction(0), Fraction(1)
    # accumulate from l = m downwards: m!/l! = prod_{j=l+1}^{m} j
    for l in range(m, -1, -1):
        total += term * k ** l
        term *= l if l else 1
    return total


@lru_cache(maxsize=None)
def _univariate(a: int, b: int, power: int, kink: float | None, basis: str) -> float:
    """``int x^power p_a(x) p_b(x) w(x) e^{-x} dx`` over ``[0, inf)``.

    ``p_a`` is the basis polynomial of index ``a``. The weight ``w`` is 1
    when ``kink`` is ``None`` and ``(x - kink)_+`` otherwise.
    """
    if basis == "laguerre":
        pa, pb = _laguerre_exact(a), _laguerre_exact(b)
    else:
        pa = [Fraction(0)] * a + [Fraction(1)]
        pb = [Fraction(0)] * b + [Fraction(1)]
    prod = [Fraction(0)] * power + _poly_mul(pa, pb)
    if kink is None:
        return float(sum(c * math.factorial(m) for m, c in enumerate(prod) if c))
    k = Fraction(kink)
    total = Fraction(0)
    for m, c in enumerate(prod):
        if c:
            total += c * (_tail_poly_value(m + 1, k) - k * _tail_poly_value(m, k))
    return float(total) * math.exp(-kink)


def _integral_matrix(f: Polynomial, kink: tuple[int, float] | None,
                     index: Sequence[MultiIndex], basis: str) -> np.ndarray:
    """``Q[i, j] = int f(x) w(x) b_i(x) b_j(x) dnu`` for the product basis ``index``.

    ``kink = (coordinate, k)`` selects ``w = (x_coordinate - k)_+``.
    """
    n = f.n
    N = len(index)
    Q = np.zeros((N, N))
    for gamma, coef in f.terms.items():
        for i in range(N):
            for j in range(i, N):
                val = coef
                for c in range(n):
                    kc = kink[1] if kink is not None and kink[0] == c else None
                    val *= _univariate(index[i][c], index[j][c], gamma[c], kc, basis)
                Q[i, j] += val
                if i != j:
                    Q[j, i] += val
    return Q


def _payoff_kink(p: GmpProblem, K: float) -> tuple[float, tuple[int, float]]:
    """Weight and kink of the payoff, which must depend on one coordinate."""
    pay = p.payoff
    if pay.kind == "single-call" or (pay.kind == "call-on-max" and p.n == 1):
        return 1.0, (0, K)
    if pay.kind == "weighted-basket":
        nz = [i for i, w in enumerate(pay.weights) if w != 0]
        if len(nz) == 1:
            w = pay.weights[nz[0]]
            return w, (nz[0], K / w)
    raise ValidationError(
        "the inner hierarchy needs a payoff with a single kink coordinate "
        f"(got {pay.kind} on {p.n} assets)"
    )


# -- assembly -----------------------------------------------------------------

@dataclass(frozen=True)
class InnerProgram:
    program: ConicProgram
    basis_index: tuple[MultiIndex, ...]
    gram_vars: np.ndarray  # (N, N) variable index of each Gram entry
    basis_norms: np.ndarray  # basis polynomial i is divided by basis_norms[i]
    scale: float
    rows: tuple[str, ...]  # label of each pair of inequality rows


def _gram_layout(N: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    iu, ju = np.triu_indices(N)
    var = np.arange(len(iu))
    full = np.zeros((N, N), np.int64)
    full[iu, ju] = var
    full[ju, iu] = var
    return iu, ju, full


def _linear_in_gram(Q: np.ndarray, iu: np.ndarray, ju: np.ndarray) -> np.ndarray:
    """Coefficients of ``trace(Q G)`` in the upper-triangle Gram variables."""
    return np.where(iu == ju, 1.0, 2.0) * Q[iu, ju]


def assemble_inner(inst: InnerInstance, direction: str | None) -> InnerProgram:
    """Program in the Gram entries; ``direction=None`` gives a feasibility problem."""
    if direction not in ("lower", "upper", None):
        raise ValueError("direction must be 'lower', 'upper' or None")
    p, s = inst.problem, inst.data_scale
    n = p.n
    index = monomials(n, inst.r)
    N = len(index)
    iu, ju, full = _gram_layout(N)
    one = Polynomial.constant(n, 1.0)
    # normalising each basis polynomial keeps monomial Gram entries comparable
    gram_mass = _integral_matrix(one, None, index, inst.basis)
    norms = np.sqrt(np.diag(gram_mass))
    inv = np.outer(1.0 / norms, 1.0 / norms)

    def integral(f, kink):
        return _integral_matrix(f, kink, index, inst.basis) * inv

    rows, rhs, labels = [], [], []
    for j, o in enumerate(p.options):
        Q = integral(one, (o.asset, o.strike / s))
        rows.append(_linear_in_gram(Q, iu, ju))
        rhs.append(o.price / s)
        labels.append(f"option{j + 1}")
    equality = []
    for j, m in enumerate(p.moments):
        f = m.f.substitute_scale(s) * (1.0 / s ** m.f.degree)
        Q = integral(f, None)
        rows.append(_linear_in_gram(Q, iu, ju))
        rhs.append(m.rhs / s ** m.f.degree)
        labels.append(f"moment{j + 1}")
        equality.append(m.relation == "equality")
    rows.append(_linear_in_gram(gram_mass * inv, iu, ju))
    rhs.append(1.0 / s if inst.scaled_mass else 1.0)
    labels.append("mass")

    eps = inst.epsilon
    A = np.array(rows)
    b = np.array(rhs)
    two_sided = np.array([True] * len(p.options) + equality + [True])
    A_ub = np.vstack([A, -A[two_sided]])
    b_ub = np.concatenate([b + eps, -(b[two_sided] - eps)])

    c = np.zeros(len(iu))
    sense = "min"
    if direction is not None:
        weight, kink = _payoff_kink(p, p.payoff.strike / s)
        c = weight * _linear_in_gram(integral(one, kink), iu, ju)
        sense = "min" if direction == "lower" else "max"
    block = PsdBlock(N, iu, ju, np.arange(len(iu)), np.ones(len(iu)), label="gram")
    prog = ConicProgram(len(iu), c, sense, A_ub=A_ub, b_ub=b_ub, blocks=(block,))
    return InnerProgram(prog, tuple(index), full, norms, s, tuple(labels))


def density(inner: InnerProgram, x: np.ndarray, basis: str) -> Polynomial:
    """The SOS density ``h`` (in normalised coordinates) for Gram solution ``x``."""
    G = x[inner.gram_vars] / np.outer(inner.basis_norms, inner.basis_norms)
    index = inner.basis_index
    n = len(index[0])
    if basis == "laguerre":
        uni = {}
        polys = []
        for alpha in index:
            q = Polynomial.constant(n, 1.0)
            for c, a in enumerate(alpha):
                if (c, a) not in uni:
                    lag = laguerre_coefficients(a)
                    uni[(c, a)] = Polynomial(n, {
                        tuple(m if i == c else 0 for i in range(n)): v
                        for (m,), v in lag.terms.items()
                    })
                q = q * uni[(c, a)]
            polys.append(q)
    else:
        polys = [Polynomial(n, {alpha: 1.0}) for alpha in index]
    h = Polynomial(n, {})
    for i, pi in enumerate(polys):
        for j, pj in enumerate(polys):
            if G[i, j] != 0:
                h = h + (pi * pj) * float(G[i, j])
    return h


# -- solving ------------------------------------------------------------------

def _feasible(inst: InnerInstance, settings: SolverSettings | None) -> bool:
    prog = assemble_inner(inst, None).program
    try:
        sol = solve_conic(prog, settings)
    except (NumericalFailure, IllConditioned):
        # undecided solves count as infeasible, so the reported eps is safe
        return False
    return sol.status in ("optimal", "inaccurate")


def min_feasible_epsilon(inst: InnerInstance, tol: float = EPS_TOL,
                         settings: SolverSettings | None = None) -> float:
    """Smallest feasible ``epsilon`` up to ``tol``, found by bisection.

    The upper end starts at 0.1 and doubles until feasible; ``inst.epsilon``
    is ignored.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    hi = EPS_START
    while not _feasible(replace(inst, epsilon=hi), settings):
        hi *= 2.0
        if hi > EPS_CAP:
            raise InfeasibleAtCap(f"no feasible epsilon up to {EPS_CAP:g}")
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _feasible(replace(inst, epsilon=mid), settings):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class InnerResult:
    report: BoundReport
    density: Polynomial | None  # normalised coordinates x / scale


def solve_inner_detailed(inst: InnerInstance, direction: str,
                         settings: SolverSettings | None = None) -> InnerResult:
    start = time.perf_counter()
    inner = assemble_inner(inst, direction)
    prog = inner.program
    common = dict(direction=direction, level=inst.r, cells=0, psd_blocks=1,
                  variables=prog.n_vars, equalities=0,
                  inequalities=prog.n_inequalities, strike=inst.problem.payoff.strike)
    try:
        sol = solve_conic(prog, settings)
    except (NumericalFailure, IllConditioned) as exc:
        report = BoundReport(value=float("nan"), status="numerical-failure",
                             duality_gap=float("nan"), wall_time=time.perf_counter() - start,
                             message=str(exc), **common)
        return InnerResult(report, None)
    usable = sol.status in ("optimal", "inaccurate")
    value = sol.objective * inner.scale if usable else float("nan")
    gap = abs(sol.primal_objective - sol.dual_objective) * inner.scale
    report = BoundReport(value=value, status=sol.status, duality_gap=gap,
                         wall_time=time.perf_counter() - start,
                         message=f"epsilon {inst.epsilon:g}", **common)
    h = density(inner, sol.x, inst.basis) if usable else None
    return InnerResult(report, h)


def solve_inner(inst: InnerInstance, direction: str,
                settings: SolverSettings | None = None) -> BoundReport:
    """Optimal value of the eps-relaxed inner program, in price units.

    Values need not be monotone in ``r`` since the constraints are relaxed.
    """
    return solve_inner_detailed(inst, direction, settings).report
