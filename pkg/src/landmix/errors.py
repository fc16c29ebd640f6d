"""Exception hierarchy shared across the package."""


class LandmixError(Exception):
    """Base class for all package errors."""


class ConfigError(LandmixError):
    """Invalid run or chain configuration."""


class DataFormatError(LandmixError):
    """Malformed or inconsistent input data."""


class SectorMismatchError(LandmixError):
    """A sector was requested that the model kind does not carry."""


class DegenerateCovarianceError(LandmixError):
    """A 2x2 covariance matrix is singular or not positive definite."""


class DegenerateDataError(LandmixError):
    """Data (or current state) makes a full conditional improper."""
