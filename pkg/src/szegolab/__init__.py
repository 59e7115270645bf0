"""Toeplitz determinants of n-dependent symbols and their CUE counterparts."""

__version__ = "0.1.0"

from .errors import DegenerateDeterminantError, NumericError, TruncationError, ValidationError
from .symbols import LaurentSeries, Schedule, SymbolSpec

__all__ = [
    "__version__",
    "LaurentSeries",
    "Schedule",
    "SymbolSpec",
    "ValidationError",
    "TruncationError",
    "NumericError",
    "DegenerateDeterminantError",
]
