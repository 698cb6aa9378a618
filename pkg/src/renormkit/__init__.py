"""Constructive factorization and renormalization tools for near-identity maps."""

from .errors import (
                     ConvergenceFailure,
                     DomainViolation,
                     ManifestParseError,
                     NumericalError,
                     RenormkitError,
                     ValidationError,
)
from .polynomial import Polynomial

__version__ = "0.1.0"

__all__ = [
    "Polynomial",
    "RenormkitError",
    "ValidationError",
    "NumericalError",
    "DomainViolation",
    "ConvergenceFailure",
    "ManifestParseError",
]
