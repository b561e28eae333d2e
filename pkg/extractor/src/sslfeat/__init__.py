"""Feature extraction frontend for the fluency scoring pipeline.

Writes the pipeline's file formats (binary feature matrices, alignment JSON
lines, corpus metadata) without importing the scoring package; the formats
are the interface.
"""

from .align import convert_alignment, parse_segment_file
from .errors import AlignmentError, AudioError, ExtractionError
from .extract import ExtractionJob, extract
from .fmx import write_feature_matrix

__all__ = [
    "AlignmentError",
    "AudioError",
    "ExtractionError",
    "ExtractionJob",
    "convert_alignment",
    "extract",
    "parse_segment_file",
    "write_feature_matrix",
]
