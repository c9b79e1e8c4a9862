"""Exception taxonomy. The CLI maps these to exit codes (see cli.EXIT_CODES)."""

from __future__ import annotations


class RecrlError(Exception):
    """Base class for everything raised on purpose by this package."""


class ConfigError(RecrlError):
    """Invalid, inconsistent, or unknown configuration."""


class PrerequisiteError(RecrlError):
    """A required input artifact is missing or unusable (e.g. SFT checkpoint)."""


class NumericsError(RecrlError):
    """Non-finite values where finite ones are required; the step is aborted."""


class UnknownTokenError(RecrlError):
    """Text contains a token outside the vocabulary."""

    def __init__(self, token: str, position: int):
        super().__init__(f"unknown token {token!r} at position {position}")
        self.token = token
        self.position = position


class PromptOverflowError(RecrlError):
    """Prompt would exceed the token budget even after history truncation."""


class ParseError(RecrlError):
    """Malformed serialized artifact (dataset line, checkpoint, config file)."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyDatasetError(RecrlError):
    """An operation that needs at least one example got zero."""


class TapeError(RecrlError):
    """Gradient tape misuse (backward twice, or grads read before backward)."""
