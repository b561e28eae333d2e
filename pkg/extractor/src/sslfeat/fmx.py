"""Writer for the scorer's binary feature format.

Layout: b"FMX1" | u32 frame count T | u32 dimension D | T*D float32 values,
little-endian, row-major. Kept dependency-free on purpose: the consuming
package has its own reader and the bytes are the contract.
"""

import os
import struct

import numpy as np

from .errors import ExtractionError

MAGIC = b"FMX1"


def write_feature_matrix(values: np.ndarray, path) -> int:
    """Atomically write one T x D float32 matrix; returns T."""
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
        raise ExtractionError(f"feature matrix must be non-empty 2-D, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ExtractionError("feature matrix contains non-finite values")
    frames, dim = values.shape
    payload = MAGIC + struct.pack("<II", frames, dim) + \
        np.ascontiguousarray(values).astype("<f4").tobytes()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(payload)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
    return frames
