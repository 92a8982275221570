"""Exception hierarchy shared by every estimator in the package."""

from __future__ import annotations


class UdidError(Exception):
    """Base class for all package errors."""


class ValidationError(UdidError, ValueError):
    """Input data violates one or more dataset invariants.

    Attributes
    ----------
    issues : list of (message, rows)
        Every violated invariant with the offending row indices (possibly empty).
    """

    def __init__(self, issues):
        self.issues = list(issues)
        lines = []
        for message, rows in self.issues:
            if rows:
                shown = ", ".join(str(r) for r in rows[:20])
                more = "" if len(rows) <= 20 else f" (+{len(rows) - 20} more)"
                lines.append(f"{message} at rows {shown}{more}")
            else:
                lines.append(message)
        super().__init__("; ".join(lines))


class ConvergenceError(UdidError, RuntimeError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message, block=None):
        self.block = block
        prefix = f"[{block}] " if block else ""
        super().__init__(prefix + message)


class SeparationError(ConvergenceError):
    """A likelihood is unbounded because some component diverges."""

    def __init__(self, message, component=None, block=None):
        self.component = component
        super().__init__(message, block=block)


class SingularMatrixError(UdidError, ArithmeticError):
    """A Jacobian or design matrix is (numerically) singular."""

    def __init__(self, message, directions=None):
        self.directions = directions or []
        super().__init__(message)


class DivergentTiltError(UdidError, ArithmeticError):
    """An exponential tilt of a baseline density is not normalizable."""


class OverlapError(UdidError, ValueError):
    """Fitted treatment probabilities leave the admissible open interval."""
