"""Exception hierarchy shared by all modules."""


class SpectralRatesError(Exception):
    """Base class for errors raised by this package."""


class ParameterError(SpectralRatesError, ValueError):
    """Invalid parameter value (index out of range, wrong sign, ...)."""


class HypothesisError(ParameterError):
    """A bound or formula is requested outside the region where it holds."""


class DataError(SpectralRatesError, ValueError):
    """Malformed input data: bad vectors, files, asymmetric matrices."""


class NumericalError(SpectralRatesError, ArithmeticError):
    """A numerical procedure failed (no convergence, overflow, divergence)."""


class WindowError(DataError):
    """A power-law fit window is empty, too short, or holds nonpositive losses."""


class FitError(DataError):
    """A least-squares fit is degenerate (for instance constant losses)."""
