"""WAV decoding via the standard library.

Only PCM16 WAV is accepted; anything else should be converted upstream.
Multi-channel audio is downmixed by averaging.
"""

import wave

import numpy as np

from .errors import AudioError


def read_wav(path) -> tuple[np.ndarray, int]:
    """Decode to (float32 samples in [-1, 1], sample_rate)."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE":
                raise AudioError(f"{path}: compressed WAV ({w.getcomptype()}) not supported")
            if w.getsampwidth() != 2:
                raise AudioError(
                    f"{path}: only 16-bit PCM supported, got {8 * w.getsampwidth()}-bit"
                )
            channels = w.getnchannels()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as e:
        raise AudioError(f"{path}: undecodable audio: {e}") from None
    except EOFError:
        raise AudioError(f"{path}: undecodable audio: truncated file") from None
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    if samples.size == 0:
        raise AudioError(f"{path}: no audio samples")
    return samples, rate
