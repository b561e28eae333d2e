"""Shared exception types; the CLI maps each to a distinct exit code."""


class FluscoreError(Exception):
    """Base class for all package-level errors."""


class FormatError(FluscoreError):
    """Malformed on-disk artifact (bad magic, truncation, corrupt payload)."""


class ValidationError(FluscoreError):
    """Well-formed input that violates a documented invariant."""


class TrainingError(FluscoreError):
    """Training aborted (non-finite loss, inconsistent resume state)."""
