"""Exception types raised across the package."""


class MarError(Exception):
    """Base class for package errors."""


class ConfigurationError(MarError, ValueError):
    """Inconsistent sizes, geometries or configuration values."""


class PlacementInfeasibleError(MarError):
    """No object placement reached the required brain overlap."""


class BaselineDegenerateError(MarError):
    """A sinogram row was masked end to end, so Li-MAR had nothing to interpolate from."""


class TrainingDivergedError(MarError):
    """A training loss became non-finite."""


class TensorFormatError(MarError, ValueError):
    """Malformed tensor container file."""
