"""Exception hierarchy shared by all modules.

``ValidationError`` marks bad inputs (CLI exit code 2); ``NumericalError`` and
its subclasses mark computations that ran but failed (CLI exit code 3).
"""

from __future__ import annotations

__all__ = [
    "RenormkitError",
    "ValidationError",
    "NumericalError",
    "DomainViolation",
    "ConvergenceFailure",
    "ManifestParseError",
]


class RenormkitError(Exception):
    """Base class; ``record()`` gives a machine-readable summary."""

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def record(self) -> dict:
        out = {"error": type(self).__name__, "message": self.message}
        for key, value in self.details.items():
            out[key] = _plain(value)
        return out


class ValidationError(RenormkitError, ValueError):
    """Input violates a precondition. ``field`` names the offending item."""

    def __init__(self, message: str, field: str | None = None, **details):
        super().__init__(message, field=field, **details)
        self.field = field


class NumericalError(RenormkitError, ArithmeticError):
    """A numerical procedure did not meet its tolerance."""


class DomainViolation(NumericalError):
    """A map was evaluated outside its declared domain."""

    def __init__(self, message: str, factor: str | None = None, point=None, **details):
        super().__init__(message, factor=factor, point=point, **details)
        self.factor = factor
        self.point = point


class ConvergenceFailure(NumericalError):
    """Iteration (Newton, quadrature, integration) failed to converge."""


class ManifestParseError(ValidationError):
    """Malformed manifest text; carries the 1-based line number and field."""

    def __init__(self, message: str, line: int, field: str | None = None):
        super().__init__(f"line {line}: {message}", field=field, line=line)
        self.line = line


def _plain(value):
    try:
        import numpy as np

        if isinstance(value, np.ndarray):
            return value.tolist()
        if isinstance(value, np.generic):
            return value.item()
    except ImportError:  # pragma: no cover
        pass
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value
