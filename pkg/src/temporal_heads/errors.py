"""Exception hierarchy shared by every module of the package."""


class TemporalHeadsError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(TemporalHeadsError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(TemporalHeadsError, ValueError):
    """A precondition of an operation does not hold."""


class ConfigError(TemporalHeadsError, ValueError):
    """An architecture, training or harness configuration is invalid."""


class DataError(TemporalHeadsError, ValueError):
    """Feature data or labels are malformed."""


class FormatError(DataError):
    """A feature file does not follow the on-disk layout."""


class TrainingError(TemporalHeadsError, RuntimeError):
    """Training diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class GradCheckError(TemporalHeadsError, AssertionError):
    """Analytic and numerical gradients disagree."""

    def __init__(self, message, parameter=None, error=None):
        super().__init__(message)
        self.parameter = parameter
        self.error = error
