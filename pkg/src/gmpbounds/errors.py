"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class GmpBoundsError(Exception):
    """Base class for all package errors."""


class ParseError(GmpBoundsError):
    """A configuration document could not be parsed."""


class ValidationError(GmpBoundsError):
    """Problem data violates a model invariant."""


class DegreeOverflow(GmpBoundsError):
    """A polynomial degree exceeds the available truncation degree."""


class PartitionOverflow(GmpBoundsError):
    """The cell enumeration exceeded its configured limit."""


class SolverError(GmpBoundsError):
    """The conic solver could not produce a usable answer."""


class NumericalFailure(SolverError):
    """Iteration limit reached or progress stalled without convergence."""


class IllConditioned(NumericalFailure):
    """The Newton system could not be factorized reliably."""


class Infeasible(SolverError):
    """The program was certified primal infeasible."""


class LPInfeasible(Infeasible):
    """A discretized LP has no feasible atom weights on its grid."""


class InvalidInput(GmpBoundsError):
    """Inputs to a closed-form bound are inconsistent."""


class NoBoundAvailable(GmpBoundsError):
    """No support bound can be derived from the available data."""


class InfeasibleAtCap(GmpBoundsError):
    """Epsilon search exceeded its upper cap without finding a feasible program."""
