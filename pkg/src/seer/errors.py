"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class SeerError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(SeerError):
    """A JSON-lines input record is malformed."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyInput(SeerError):
    pass


class ConfigError(SeerError):
    pass


class EmptyKey(SeerError):
    pass


class DecodeError(SeerError):
    """A wire-format line could not be decoded.

    ``offset`` is the byte offset inside the line where decoding failed.
    """

    def __init__(self, message: str, offset: int = 0, line: int | None = None) -> None:
        self.offset = offset
        self.line = line
        where = f"byte {offset}"
        if line is not None:
            where = f"line {line}, {where}"
        super().__init__(f"{where}: {message}")


class OutOfOrderError(SeerError):
    pass


class OrderOutOfRange(SeerError):
    pass


class StateArityMismatch(SeerError):
    pass


class OrderMismatch(SeerError):
    pass


class CorruptSnapshot(SeerError):
    pass
