"""Exception hierarchy shared by all dnsv modules."""


class DnsvError(Exception):
    """Base class for all errors raised by this package."""


class UtteranceTooShort(DnsvError, ValueError):
    pass


class DegenerateNorm(DnsvError, FloatingPointError):
    """A vector norm fell below the guard value where a direction is required."""


class ConfigError(DnsvError, ValueError):
    pass


class TapPointUnavailable(DnsvError, ValueError):
    pass


class TrainingDataError(DnsvError, ValueError):
    pass


class ModelDegenerate(DnsvError, ValueError):
    pass


class MetricUndefined(DnsvError, ValueError):
    pass


class DomainError(DnsvError, ValueError):
    pass


class FormatError(DnsvError, ValueError):
    """A file did not match the expected on-disk format."""


class TrainingDiverged(DnsvError, FloatingPointError):
    """Loss became non-finite during training."""
