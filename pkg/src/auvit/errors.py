"""Exception types raised across the package."""


class AuvitError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(AuvitError, ValueError):
    pass


class NotScalar(AuvitError, ValueError):
    pass


class IndexOutOfRange(AuvitError, IndexError):
    pass


class ParseError(AuvitError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvariantViolation(AuvitError, ValueError):
    pass


class NoImage(AuvitError, ValueError):
    pass


class EmptyDataset(AuvitError, ValueError):
    pass


class OddGrid(AuvitError, ValueError):
    pass


class MissingGrid(AuvitError, ValueError):
    pass


class MissingClassToken(AuvitError, ValueError):
    pass


class LabelOutOfRange(AuvitError, ValueError):
    pass


class EmptyRegion(AuvitError, ValueError):
    pass


class UnassignedAu(AuvitError, ValueError):
    pass


class UnsupportedScheme(AuvitError, ValueError):
    pass


class EmptyBatch(AuvitError, ValueError):
    pass


class NoLabels(AuvitError, ValueError):
    pass


class NoSamples(AuvitError, ValueError):
    pass


class ZeroVector(AuvitError, ValueError):
    pass


class ConfigError(AuvitError, ValueError):
    """Invalid run configuration; ``field`` names the offending key path."""

    def __init__(self, message, field=None):
        self.field = field
        self.reason = message
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
