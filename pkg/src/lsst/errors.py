"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage/configuration problems exit 1,
data and parse problems exit 2, verification failures exit 3.
"""


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class ConfigError(ValueError):
    """A configuration value violates a structural constraint."""


class UsageError(ValueError):
    """An API was called in an unsupported way (e.g. non-scalar loss)."""


class FormatError(ValueError):
    """A file could not be parsed.  Carries the byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class MetricUndefinedError(ValueError):
    """A metric has no defined value for the given inputs."""


class NonFiniteGradientError(RuntimeError):
    """A gradient contained NaN/Inf; names the offending parameter."""

    def __init__(self, parameter):
        super().__init__(f"non-finite gradient for parameter '{parameter}'")
        self.parameter = parameter
