class SslfeatError(Exception):
    """Base for all errors raised by this package."""


class AudioError(SslfeatError):
    """Audio file missing, undecodable, or with unusable parameters."""


class ExtractionError(SslfeatError):
    """Model loading or feature extraction failed."""


class AlignmentError(SslfeatError):
    """External alignment input is malformed or inconsistent."""
