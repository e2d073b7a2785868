from __future__ import annotations

from typing import Optional


class BNInvertError(Exception):
    """Base class for every error raised by bninvert."""


class InvalidArgumentError(BNInvertError, ValueError):
    pass


class ShapeError(BNInvertError, ValueError):
    pass


class GraphError(BNInvertError, RuntimeError):
    pass


class InvalidModelError(BNInvertError, ValueError):
    pass


class InvalidStateError(BNInvertError, RuntimeError):
    pass


class ConfigError(BNInvertError, ValueError):
    pass


class FormatError(BNInvertError, ValueError):
    def __init__(self, message: str, offset: Optional[int] = None) -> None:
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ChecksumError(FormatError):
    pass
