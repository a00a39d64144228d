"""Exceptions raised by HyperScore."""

from __future__ import annotations

from .const import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL


class HyperScoreError(Exception):
    """Base error; carries the process exit code used by the CLI."""

    exit_code = EXIT_CONFIG


class ArgumentError(HyperScoreError, ValueError):
    """An argument is out of its valid range or has the wrong shape."""


class ConfigurationError(HyperScoreError):
    """The run configuration or dataset layout is unusable."""


class FeatureFormatError(HyperScoreError):
    """A feature container or checkpoint has a bad magic or a truncated header."""

    exit_code = EXIT_DATA


class DimensionError(HyperScoreError):
    """Declared dimensions do not match the stored payload."""

    exit_code = EXIT_DATA


class FeatureDataError(HyperScoreError):
    """Stored values or ids are invalid (non-finite, unknown, out of range)."""

    exit_code = EXIT_DATA


class DegenerateFeatureError(HyperScoreError):
    """A feature vector is too close to zero to be normalized."""

    exit_code = EXIT_DATA


class UndefinedCorrelationError(HyperScoreError):
    """A correlation coefficient is undefined for the given inputs."""

    exit_code = EXIT_DATA


class AnnotationParseError(HyperScoreError):
    """A subjective-score CSV row could not be parsed."""

    exit_code = EXIT_DATA

    def __init__(self, line: int, message: str) -> None:
        """Initialize the error with the offending line number."""
        super().__init__(f"line {line}: {message}")
        self.line = line


class NumericalError(HyperScoreError):
    """A gradient or loss became non-finite, or a gradient check failed."""

    exit_code = EXIT_NUMERICAL
