"""Exception types raised across the package."""


class LadderEmbedError(Exception):
    """Base class for all package errors."""


class DegenerateData(LadderEmbedError, ValueError):
    pass


class FormatError(LadderEmbedError, ValueError):
    """Malformed on-disk container or config file."""

    def __init__(self, message, *, path=None, line=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{': '.join([', '.join(where), message])}"
        super().__init__(message)
        self.path = path
        self.line = line
        self.offset = offset


class ShapeMismatch(LadderEmbedError, ValueError):
    pass


class EmptyCombination(LadderEmbedError, ValueError):
    pass


class SingleClass(LadderEmbedError, ValueError):
    pass


class InsufficientCalibration(LadderEmbedError, ValueError):
    pass


class AllZeroDifferences(LadderEmbedError, ValueError):
    pass


class ConfigError(LadderEmbedError, ValueError):
    """Unknown key, missing key or unparsable value in a run config."""
