"""Exception types shared across the package."""

from __future__ import annotations


class DimensionError(ValueError):
    """Raised when array shapes or feature dimensions disagree."""


class NumericalError(ArithmeticError):
    """A matrix that must be positive definite (or finite) is not.

    ``class_id`` is set when the failure can be pinned to one class.
    """

    def __init__(self, message: str, class_id: int | None = None):
        super().__init__(message)
        self.class_id = class_id


class FormatError(ValueError):
    """Malformed binary or text input; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
