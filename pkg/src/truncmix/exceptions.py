"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid run configuration or constraint description."""


class ConstraintViolationError(ValueError):
    """A data row lies outside the constraint set."""

    def __init__(self, message, row=None):
        super(ConstraintViolationError, self).__init__(message)
        self.row = row


class RunawayRejectionError(RuntimeError):
    """Rejection sampling exhausted its safety cap without an acceptance.

    Signals a proposal (or a single component) with negligible mass on the
    constraint set.
    """

    def __init__(self, message, count=None, component=None, sweep=None):
        super(RunawayRejectionError, self).__init__(message)
        self.count = count
        self.component = component
        self.sweep = sweep


class DegenerateNormalizerError(ValueError):
    """A normalizing constant estimate is zero where it must be positive."""


class DataFormatError(ValueError):
    """A data file could not be parsed; ``row`` and ``column`` are 0-based."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column
