"""Problem data: observed options, moment constraints, payoff and config I/O."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .poly import Polynomial

log = logging.getLogger(__name__)

PAYOFF_KINDS = ("weighted-basket", "call-on-max", "single-call")
RELATIONS = {
    "equality": "equality",
    "eq": "equality",
    "=": "equality",
    "==": "equality",
    "less-equal": "less-equal",
    "le": "less-equal",
    "<=": "less-equal",
}


@dataclass(frozen=True)
class ObservedOption:
    """A quoted European call; ``asset`` is a zero-based asset index."""

    asset: int
    strike: float
    price: float


@dataclass(frozen=True)
class MomentConstraint:
    """``integral f dmu = rhs`` (or ``<= rhs``)."""

    f: Polynomial
    rhs: float
    relation: str = "equality"

    def __post_init__(self) -> None:
        if self.relation not in ("equality", "less-equal"):
            raise ValidationError(f"unknown relation {self.relation!r}")
        if self.f.degree < 1:
            raise ValidationError("moment constraint polynomial must have degree >= 1")


@dataclass(frozen=True)
class Halfspace:
    """The affine region ``a . x - c >= 0``."""

    a: tuple[float, ...]
    c: float

    def polynomial(self) -> Polynomial:
        return Polynomial.affine(self.a, -self.c)

    def value(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ np.asarray(self.a) - self.c


@dataclass(frozen=True)
class PayoffPiece:
    """One affine piece of a payoff together with the region where it is active.

    ``lower`` holds per-coordinate lower limits implied by the region (for
    instance ``x_j >= K``); the partitioner applies them as box bounds.
    """

    expr: Polynomial
    halfspaces: tuple[Halfspace, ...]
    lower: tuple[float, ...]


@dataclass(frozen=True)
class PayoffSpec:
    kind: str
    strike: float
    weights: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in PAYOFF_KINDS:
            raise ValidationError(f"unknown payoff kind {self.kind!r}")
        if self.strike < 0:
            raise ValidationError("payoff strike must be nonnegative")
        if self.kind == "weighted-basket":
            if any(w < 0 for w in self.weights) or not any(w > 0 for w in self.weights):
                raise ValidationError("basket weights must be >= 0 and not all zero")

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Payoff at points ``x`` of shape ``(N, n)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "weighted-basket":
            s = x @ np.asarray(self.weights)
        elif self.kind == "call-on-max":
            s = x.max(axis=1)
        else:
            s = x[:, 0]
        return np.maximum(0.0, s - self.strike)


def payoff_pieces(p: PayoffSpec, n: int) -> list[PayoffPiece]:
    """Affine pieces of the payoff with their activation regions.

    Outside the union of the returned regions the payoff is zero.
    """
    zeros = (0.0,) * n
    if p.kind == "weighted-basket":
        if len(p.weights) != n:
            raise ValidationError(f"basket needs {n} weights, got {len(p.weights)}")
        hs = Halfspace(tuple(float(w) for w in p.weights), p.strike)
        return [PayoffPiece(hs.polynomial(), (hs,), zeros)]
    if p.kind == "single-call":
        unit = tuple(1.0 if i == 0 else 0.0 for i in range(n))
        lower = tuple(p.strike if i == 0 else 0.0 for i in range(n))
        return [PayoffPiece(Polynomial.affine(unit, -p.strike), (), lower)]
    pieces = []
    for j in range(n):
        unit = tuple(1.0 if i == j else 0.0 for i in range(n))
        lower = tuple(p.strike if i == j else 0.0 for i in range(n))
        cuts = []
        for i in range(n):
            if i != j:
                a = [0.0] * n
                a[j], a[i] = 1.0, -1.0
                cuts.append(Halfspace(tuple(a), 0.0))
        pieces.append(PayoffPiece(Polynomial.affine(unit, -p.strike), tuple(cuts), lower))
    return pieces


@dataclass(frozen=True)
class GmpProblem:
    """A complete bound-computation instance.

    ``M`` may be ``None`` to drop the moment cap entirely; this is only
    meaningful for studying non-attainment and is never the default.
    """

    n: int
    payoff: PayoffSpec
    options: tuple[ObservedOption, ...]
    moments: tuple[MomentConstraint, ...]
    M: float | None
    B: float
    d: int
    asset_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        validate(self)

    @property
    def max_degree(self) -> int:
        return max([1] + [c.f.degree for c in self.moments])

    def strikes(self, asset: int) -> list[float]:
        return [o.strike for o in self.options if o.asset == asset]

    def with_strike(self, K: float) -> GmpProblem:
        return replace(self, payoff=replace(self.payoff, strike=float(K)))

    def with_bounds(self, B: float | None = None, M: float | None = ..., d: int | None = None) -> GmpProblem:  # type: ignore[assignment]
        return replace(
            self,
            B=self.B if B is None else float(B),
            M=self.M if M is ... else M,
            d=self.d if d is None else d,
        )


def default_d(max_degree: int) -> int:
    """Smallest even integer >= max_degree + 1."""
    d = max_degree + 1
    return d + (d % 2)


def validate(p: GmpProblem) -> None:
    if p.n < 1:
        raise ValidationError("need at least one asset")
    if not p.options and not p.moments:
        raise ValidationError("problem has neither option prices nor moment constraints")
    if not (math.isfinite(p.B) and p.B > 0):
        raise ValidationError(f"B must be positive, got {p.B}")
    if p.M is not None and not p.M > 0:
        raise ValidationError(f"M must be positive, got {p.M}")
    if p.d % 2 or p.d < p.max_degree + 1:
        raise ValidationError(f"d must be even and >= {p.max_degree + 1}, got {p.d}")
    for o in p.options:
        if not 0 <= o.asset < p.n:
            raise ValidationError(f"option refers to asset {o.asset} outside 0..{p.n - 1}")
        if o.price < 0 or o.strike < 0:
            raise ValidationError(f"negative strike or price in {o}")
        if o.strike >= p.B:
            raise ValidationError(f"B = {p.B} must exceed every strike (found {o.strike})")
    for a in range(p.n):
        ks = p.strikes(a)
        if len(set(ks)) != len(ks):
            raise ValidationError(f"duplicate strikes for asset {a}")
        if ks != sorted(ks):
            raise ValidationError(f"strikes for asset {a} are not ascending")
    for c in p.moments:
        if c.f.n != p.n:
            raise ValidationError("moment constraint has the wrong number of variables")
    pay = p.payoff
    if pay.kind == "weighted-basket":
        if len(pay.weights) != p.n:
            raise ValidationError(f"basket needs {p.n} weights")
        if p.B * sum(pay.weights) <= pay.strike:
            raise ValidationError("payoff strike is out of reach inside [0, B]^n")
    elif pay.strike >= p.B:
        raise ValidationError(f"B = {p.B} must exceed the payoff strike {pay.strike}")


# --------------------------------------------------------------------------
# configuration documents


def _num(v: Any, what: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{what} must be a number, got {v!r}")
    return float(v)


def _poly_from_json(coeffs: Any, n: int) -> Polynomial:
    if not isinstance(coeffs, list) or not coeffs:
        raise ParseError("moment constraint needs a non-empty 'coeffs' list")
    terms: dict[tuple[int, ...], float] = {}
    for term in coeffs:
        try:
            exps = tuple(int(e) for e in term["exponents"])
            val = _num(term["value"], "coefficient value")
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad polynomial term {term!r}") from exc
        if len(exps) != n or any(e < 0 for e in exps):
            raise ParseError(f"exponent vector {list(exps)} must have {n} nonnegative entries")
        terms[exps] = terms.get(exps, 0.0) + val
    return Polynomial(n, terms)


def problem_from_dict(doc: dict[str, Any], suggest: bool = True) -> GmpProblem:
    """Build a validated problem from a parsed config document.

    ``"B": "auto"`` asks for the support bound of :mod:`gmpbounds.support`.
    """
    if not isinstance(doc, dict):
        raise ParseError("config must be a JSON object")
    try:
        assets = doc["assets"]
        payoff = doc["payoff"]
    except KeyError as exc:
        raise ParseError(f"missing required key {exc.args[0]!r}") from exc
    if not isinstance(assets, list) or not assets:
        raise ParseError("'assets' must be a non-empty list")
    n = len(assets)
    names, options = [], []
    for a, asset in enumerate(assets):
        if not isinstance(asset, dict):
            raise ParseError("each asset must be an object")
        names.append(str(asset.get("name", f"asset{a + 1}")))
        quotes = asset.get("options", [])
        if not isinstance(quotes, list):
            raise ParseError("'options' must be a list")
        for q in quotes:
            try:
                options.append(
                    ObservedOption(a, _num(q["strike"], "strike"), _num(q["price"], "price"))
                )
            except (KeyError, TypeError) as exc:
                raise ParseError(f"bad option quote {q!r}") from exc
    # canonical order: asset-major, strikes ascending
    options.sort(key=lambda o: (o.asset, o.strike))

    if not isinstance(payoff, dict) or "kind" not in payoff or "strike" not in payoff:
        raise ParseError("'payoff' needs 'kind' and 'strike'")
    weights = payoff.get("weights", [])
    if not isinstance(weights, list):
        raise ParseError("'weights' must be a list")
    spec = PayoffSpec(
        str(payoff["kind"]),
        _num(payoff["strike"], "payoff strike"),
        tuple(_num(w, "weight") for w in weights),
    )

    moments = []
    for mc in doc.get("moment_constraints", []) or []:
        if not isinstance(mc, dict) or "rhs" not in mc:
            raise ParseError(f"bad moment constraint {mc!r}")
        rel = RELATIONS.get(str(mc.get("relation", "equality")))
        if rel is None:
            raise ParseError(f"unknown relation {mc.get('relation')!r}")
        moments.append(
            MomentConstraint(_poly_from_json(mc.get("coeffs"), n), _num(mc["rhs"], "rhs"), rel)
        )

    if "M" not in doc:
        raise ParseError("missing required key 'M'")
    M = None if doc["M"] is None else _num(doc["M"], "M")
    max_deg = max([1] + [c.f.degree for c in moments])
    d = doc.get("d")
    d = default_d(max_deg) if d is None else int(_num(d, "d"))

    if "B" not in doc:
        raise ValidationError("B must be given explicitly or as \"auto\"")
    B_raw = doc["B"]
    if B_raw == "auto":
        if not suggest:
            raise ValidationError("B = \"auto\" is not allowed here")
        if M is None:
            raise ValidationError("B = \"auto\" needs a finite moment cap M")
        from .support import suggest_B_from_options

        B = suggest_B_from_options(n, options, M)
        log.info("using suggested box bound B = %.6g", B)
    else:
        B = _num(B_raw, "B")
    return GmpProblem(n, spec, tuple(options), tuple(moments), M, B, d, tuple(names))


def load_problem(config_text: str) -> GmpProblem:
    """Parse and validate a JSON config document."""
    try:
        doc = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    return problem_from_dict(doc)


def load_problem_file(path: str) -> GmpProblem:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    return load_problem(text)


def problem_to_dict(p: GmpProblem) -> dict[str, Any]:
    names = p.asset_names or tuple(f"asset{a + 1}" for a in range(p.n))
    doc: dict[str, Any] = {
        "assets": [
            {
                "name": names[a],
                "options": [
                    {"strike": o.strike, "price": o.price} for o in p.options if o.asset == a
                ],
            }
            for a in range(p.n)
        ],
        "payoff": {"kind": p.payoff.kind, "strike": p.payoff.strike},
        "moment_constraints": [
            {
                "coeffs": [
                    {"exponents": list(alpha), "value": c} for alpha, c in sorted(m.f.terms.items())
                ],
                "rhs": m.rhs,
                "relation": m.relation,
            }
            for m in p.moments
        ],
        "M": p.M,
        "B": p.B,
        "d": p.d,
    }
    if p.payoff.kind == "weighted-basket":
        doc["payoff"]["weights"] = list(p.payoff.weights)
    return doc


def serialize(p: GmpProblem) -> str:
    return json.dumps(problem_to_dict(p), indent=2)


def covariance_constraints(
    means: Sequence[float], cov: Sequence[Sequence[float]], full: bool = False
) -> list[MomentConstraint]:
    """Mean and centred second-moment constraints.

    With ``full=False`` only the upper triangle of ``cov`` is used; ``full``
    keeps all ``n^2`` entries (the symmetric duplicates are then redundant).
    """
    n = len(means)
    out = [MomentConstraint(Polynomial.variable(n, i), float(means[i])) for i in range(n)]
    for i in range(n):
        for j in range(n) if full else range(i, n):
            xi = Polynomial.variable(n, i) - means[i]
            xj = Polynomial.variable(n, j) - means[j]
            out.append(MomentConstraint(xi * xj, float(cov[i][j])))
    return out
