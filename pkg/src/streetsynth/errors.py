"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class StreetSynthError(Exception):
    """Base class for all pipeline errors."""


class OutOfProjectionRange(StreetSynthError, ValueError):
    pass


class ParseError(StreetSynthError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")


class FormatError(StreetSynthError, ValueError):
    """A binary file has the wrong magic, a truncated payload or bad header."""


class ConfigError(StreetSynthError, ValueError):
    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(message)


class GraphInvariantError(StreetSynthError, ValueError):
    pass


class DimensionMismatch(StreetSynthError, ValueError):
    pass


class ShapeMismatch(StreetSynthError, ValueError):
    pass


class IndexOutOfRange(StreetSynthError, IndexError):
    pass


class TooFewPatches(StreetSynthError, ValueError):
    pass


class NonFiniteLoss(StreetSynthError, FloatingPointError):
    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at step {step}")


class ConfigMismatch(StreetSynthError, ValueError):
    pass


class NotThin(StreetSynthError, ValueError):
    pass


class ClosedSegment(StreetSynthError, ValueError):
    pass


class InsufficientConnectivity(StreetSynthError, RuntimeError):
    pass


class NoLand(StreetSynthError, ValueError):
    pass


class BinMismatch(StreetSynthError, ValueError):
    pass


class EmptyMaskWarning(UserWarning):
    """Distance field requested for a mask without any set pixel."""
