"""Exception types shared across the package."""


class BpcamError(Exception):
    """Base class for package errors."""


class ParameterError(BpcamError, ValueError):
    """Invalid parameter, configuration value, or argument shape."""


class FitFailureError(BpcamError, RuntimeError):
    """Nonlinear least squares did not converge or the data are degenerate."""


class ConsistencyError(BpcamError, RuntimeError):
    """Internal cross-check failed (e.g. spectral counts not integer)."""


class FrameFormatError(BpcamError, ValueError):
    """Frame-stack file is malformed, truncated, or mismatched."""


class AnalysisError(BpcamError, RuntimeError):
    """Too little usable signal to run an estimator (e.g. no usable slices)."""
