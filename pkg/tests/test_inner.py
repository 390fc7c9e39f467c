from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from gmpbounds.errors import ValidationError
from gmpbounds.inner import (
    InnerInstance,
    assemble_inner,
    exp_tail_moment,
    laguerre_coefficients,
    min_feasible_epsilon,
    solve_inner,
    solve_inner_detailed,
)
from gmpbounds.model import load_problem_file

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="module")
def subset():
    return load_problem_file(str(CONFIGS / "microsoft_subset.json"))


@pytest.fixture(scope="module")
def eps2(subset):
    return min_feasible_epsilon(InnerInstance(subset, 2))


def test_tail_moment_examples():
    assert exp_tail_moment(0, 0.0) == pytest.approx(1.0)
    assert exp_tail_moment(3, 0.0) == pytest.approx(6.0)
    assert exp_tail_moment(2, 1.0) == pytest.approx(5.0 / math.e)


@pytest.mark.parametrize("k", [0.0, 0.5, 1.0, 2.0])
def test_tail_moment_matches_quadrature(k):
    for m in range(13):
        quad, _ = integrate.quad(lambda x: x**m * math.exp(-x), k, np.inf,
                                 epsabs=0.0, epsrel=1e-13, limit=200)
        assert exp_tail_moment(m, k) == pytest.approx(quad, rel=1e-9)


def test_tail_moment_large_order():
    # 170! is the largest factorial representable as a float
    assert exp_tail_moment(170, 0.0) == pytest.approx(math.factorial(170), rel=1e-12)
    with pytest.raises(OverflowError):
        exp_tail_moment(200, 0.0)


def test_laguerre_examples():
    assert laguerre_coefficients(0).terms == {(0,): 1.0}
    assert laguerre_coefficients(1).terms == {(0,): 1.0, (1,): -1.0}


def test_laguerre_orthonormal():
    for i in range(7):
        for j in range(7):
            prod = laguerre_coefficients(i) * laguerre_coefficients(j)
            val = sum(c * exp_tail_moment(a[0], 0.0) for a, c in prod.terms.items())
            assert abs(val - (1.0 if i == j else 0.0)) < 1e-10


def test_instance_validation(subset):
    with pytest.raises(ValidationError):
        InnerInstance(subset, 0)
    with pytest.raises(ValidationError):
        InnerInstance(subset, 2, epsilon=-1.0)
    with pytest.raises(ValidationError):
        InnerInstance(subset, 2, basis="chebyshev")


def test_program_shape(subset):
    inner = assemble_inner(InnerInstance(subset, 2, epsilon=0.05), "upper")
    prog = inner.program
    assert prog.n_vars == 6  # upper triangle of a 3x3 Gram matrix
    assert prog.block_sizes == [3]
    assert inner.rows == ("option1", "option2", "mass")
    assert prog.A_ub.shape[0] == 6  # two rows per relaxed constraint


def test_huge_epsilon_feasible(subset):
    for r in (1, 3):
        rep = solve_inner(InnerInstance(subset, r, epsilon=1e6), "lower")
        assert rep.ok


def test_bisection_contract(subset, eps2):
    tol = 1e-5
    inst = InnerInstance(subset, 2)
    assert solve_inner(replace(inst, epsilon=eps2), "upper").ok
    assert solve_inner(replace(inst, epsilon=eps2 - 2 * tol), "upper").status == "infeasible"


def test_basis_equivalence(subset, eps2):
    eps = eps2 + 1e-3
    for direction in ("lower", "upper"):
        lag = solve_inner(InnerInstance(subset, 2, eps, "laguerre"), direction)
        mono = solve_inner(InnerInstance(subset, 2, eps, "monomial"), direction)
        assert lag.ok and mono.ok
        assert lag.value == pytest.approx(mono.value, abs=1e-4)


def test_epsilon_monotone(subset, eps2):
    epsilons = [eps2 + 1e-3, eps2 + 5e-3, eps2 + 2e-2]
    lows = [solve_inner(InnerInstance(subset, 3, e), "lower").value for e in epsilons]
    ups = [solve_inner(InnerInstance(subset, 3, e), "upper").value for e in epsilons]
    assert all(b <= a + 1e-6 for a, b in zip(lows, lows[1:]))
    assert all(b >= a - 1e-6 for a, b in zip(ups, ups[1:]))


def test_density_nonnegative(subset, eps2):
    res = solve_inner_detailed(InnerInstance(subset, 3, eps2 + 1e-3), "lower")
    assert res.density is not None
    x = np.linspace(0.0, 20.0, 1000)[:, None]
    assert res.density(x).min() >= -1e-9


def test_values_near_outer_bounds(subset, eps2):
    # at the minimal epsilon the inner values lie in the outer range up to the slack
    inst = InnerInstance(subset, 2, eps2)
    lo = solve_inner(inst, "lower").value
    up = solve_inner(inst, "upper").value
    assert lo <= up + 1e-6
    assert 3.375 - 0.05 <= lo and up <= 5.125 + 0.05
