"""Closed-form box bounds for the support of an optimal atomic measure."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

from .errors import InvalidInput, NoBoundAvailable

log = logging.getLogger(__name__)

MARGIN = 1.01


def support_bound(a: float, k: float, M: float) -> float:
    """Upper end of the support interval for a call with price ``a`` and strike ``k``.

    With ``a > 0`` this is the larger root ``(M + sqrt(M (M - 4 a k))) / (2 a)``.
    With ``a = 0`` any ``B > k`` works and ``k`` itself is returned, so callers
    must add a margin.
    """
    if M <= 0 or a < 0 or k < 0:
        raise InvalidInput(f"need M > 0, a >= 0, k >= 0 (got a={a}, k={k}, M={M})")
    if a == 0:
        return float(k)
    disc = M * (M - 4.0 * a * k)
    if disc < 0:
        raise InvalidInput(f"M = {M} < 4ak = {4 * a * k}: data are inconsistent")
    return (M + math.sqrt(disc)) / (2.0 * a)


@dataclass(frozen=True)
class BoundSuggestion:
    B: float
    components: tuple[float, ...]  # per-asset bound before margin


def suggest_components(n: int, options: Sequence, M: float) -> BoundSuggestion:
    comps = []
    for asset in range(n):
        quotes = [o for o in options if o.asset == asset]
        if not quotes:
            raise NoBoundAvailable(f"asset {asset + 1} has no observed options")
        last = max(quotes, key=lambda o: o.strike)
        comps.append(support_bound(last.price, last.strike, M))
    return BoundSuggestion(MARGIN * max(comps), tuple(comps))


def suggest_B_from_options(n: int, options: Sequence, M: float) -> float:
    return suggest_components(n, options, M).B


def suggest_B(p, override: float | None = None) -> float:
    """Box bound for problem ``p``: the per-asset maximum with a 1% margin.

    For several assets this is a coordinate-wise heuristic rather than a
    certified bound. An explicit ``override`` is returned as is, with a
    warning when it lies below the computed value.
    """
    if p.M is None:
        if override is None:
            raise NoBoundAvailable("no moment cap, so no support bound exists")
        return float(override)
    try:
        B = suggest_B_from_options(p.n, p.options, p.M)
    except NoBoundAvailable:
        if override is None:
            raise
        return float(override)
    if override is not None:
        if override < B:
            log.warning("B = %g is below the suggested bound %g", override, B)
        return float(override)
    return B
