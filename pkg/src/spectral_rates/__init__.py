"""Convergence rates of first-order methods on quadratics with power-law spectra."""

from .errors import (
    DataError,
    FitError,
    HypothesisError,
    NumericalError,
    ParameterError,
    SpectralRatesError,
    WindowError,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "FitError",
    "HypothesisError",
    "NumericalError",
    "ParameterError",
    "SpectralRatesError",
    "WindowError",
    "__version__",
]
