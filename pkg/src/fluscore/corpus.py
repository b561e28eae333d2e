"""On-disk corpus formats and in-memory records: features, scores, alignments, splits.

File formats:
  feature file (.fmx)   magic "FMX1", u32 LE frame count T, u32 LE dim D,
                        then T*D float32 LE values, frame-major.
  manifest              JSON lines: {"id","path","score","split"}.
  alignment file        JSON lines: {"id","segments":[[phone,start,end],...]},
                        frame indexes, end exclusive.
  phone inventory       plain text, one label per line.
  corpus metadata       JSON: {"feature_dim","frame_period"}.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

FMX_MAGIC = b"FMX1"
FMX_HEADER_SIZE = 12
SPLITS = ("train", "dev", "test")
SCORE_MIN = 0.0
SCORE_MAX = 4.0
SILENCE_LABEL = "sil"
DEFAULT_FRAME_PERIOD = 0.02


@dataclass
class FeatureMatrix:
    """T x D frame-level feature rows for one utterance (float32, row-major)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ValidationError(f"feature matrix must be 2-D, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError(f"feature matrix needs T >= 1 and D >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("feature matrix contains non-finite values")
        self.values = v

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def write_feature_matrix(m: FeatureMatrix, path) -> None:
    """Write a feature matrix; read_feature_matrix round-trips it bit-exactly."""
    v = m.values
    payload = struct.pack("<II", v.shape[0], v.shape[1]) + np.ascontiguousarray(v, dtype="<f4").tobytes()
    Path(path).write_bytes(FMX_MAGIC + payload)


def read_feature_matrix(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != FMX_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0")
    if len(raw) < FMX_HEADER_SIZE:
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    t, d = struct.unpack_from("<II", raw, 4)
    if t < 1 or d < 1:
        raise FormatError(f"{path}: invalid shape {t}x{d} in header at byte 4")
    expected = FMX_HEADER_SIZE + 4 * t * d
    if len(raw) < expected:
        raise FormatError(f"{path}: truncated payload at byte {len(raw)}, expected {expected} bytes")
    if len(raw) > expected:
        raise FormatError(f"{path}: trailing data at byte {expected}")
    values = np.frombuffer(raw, dtype="<f4", count=t * d, offset=FMX_HEADER_SIZE).reshape(t, d)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError(f"{path}: non-finite value at byte {FMX_HEADER_SIZE + 4 * int(bad[0])}")
    return FeatureMatrix(values.copy())


def peek_feature_shape(path) -> tuple[int, int]:
    """Read (T, D) from a feature file header without loading the payload."""
    with open(path, "rb") as f:
        head = f.read(FMX_HEADER_SIZE)
    if len(head) < 4 or head[:4] != FMX_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0")
    if len(head) < FMX_HEADER_SIZE:
        raise FormatError(f"{path}: truncated header at byte {len(head)}")
    t, d = struct.unpack_from("<II", head, 4)
    return t, d


@dataclass
class PhoneAlignment:
    """Ordered phone segments (label, start_frame, end_frame), end exclusive."""

    segments: list[tuple[str, int, int]]

    def validate(self, num_frames: int | None = None, labels=None) -> None:
        prev_end = 0
        for label, start, end in self.segments:
            if start < 0:
                raise ValidationError(f"segment {label!r} starts before frame 0")
            if end < start:
                raise ValidationError(f"reversed segment {label!r}: [{start}, {end})")
            if start < prev_end:
                raise ValidationError(f"overlapping segment {label!r} at frame {start}")
            if labels is not None and label not in labels:
                raise ValidationError(f"unknown phone label {label!r}")
            prev_end = end
        if num_frames is not None and prev_end > num_frames:
            raise ValidationError(
                f"alignment extends to frame {prev_end} but utterance has {num_frames} frames"
            )

    def covered_frames(self) -> int:
        return sum(end - start for _, start, end in self.segments)


@dataclass
class PhoneInventory:
    """Ordered phone labels; must contain the silence label exactly once."""

    labels: list[str]
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("phone inventory labels must be unique")
        if self.labels.count(SILENCE_LABEL) != 1:
            raise ValidationError(f"phone inventory must contain {SILENCE_LABEL!r} exactly once")
        self._index = {label: i for i, label in enumerate(self.labels)}

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label) -> bool:
        return label in self._index

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ValidationError(f"unknown phone label {label!r}") from None


def load_phone_inventory(path) -> PhoneInventory:
    labels = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    return PhoneInventory(labels)


def save_phone_inventory(inv: PhoneInventory, path) -> None:
    Path(path).write_text("".join(label + "\n" for label in inv.labels))


@dataclass
class UtteranceRecord:
    id: str
    score_raw: float
    split: str
    feature_path: Path
    alignment: PhoneAlignment | None = None


def load_manifest(path, features_dir=None) -> list[UtteranceRecord]:
    """Load utterance records, validating scores, splits and id uniqueness.

    Relative feature paths resolve against features_dir when given, otherwise
    against the manifest's own directory. Order is preserved.
    """
    base = Path(features_dir) if features_dir is not None else Path(path).parent
    records: list[UtteranceRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}:{lineno}: invalid JSON: {e}") from None
        if not isinstance(obj, dict):
            raise FormatError(f"{path}:{lineno}: expected a JSON object")
        for key in ("id", "path", "score", "split"):
            if key not in obj:
                raise ValidationError(f"{path}:{lineno}: missing key {key!r}")
        utt_id = str(obj["id"])
        if utt_id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate id {utt_id!r}")
        seen.add(utt_id)
        try:
            score = float(obj["score"])
        except (TypeError, ValueError):
            raise ValidationError(f"{path}:{lineno}: score is not a number") from None
        if not (SCORE_MIN <= score <= SCORE_MAX):
            raise ValidationError(
                f"{path}:{lineno}: score {score} outside [{SCORE_MIN}, {SCORE_MAX}]"
            )
        split = obj["split"]
        if split not in SPLITS:
            raise ValidationError(f"{path}:{lineno}: unknown split {split!r}")
        fpath = Path(obj["path"])
        if not fpath.is_absolute():
            fpath = base / fpath
        records.append(UtteranceRecord(id=utt_id, score_raw=score, split=split, feature_path=fpath))
    return records


def save_manifest(records, path) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps({"id": r.id, "path": str(r.feature_path), "score": r.score_raw,
                                "split": r.split}) + "\n")


def load_alignments(path) -> dict[str, PhoneAlignment]:
    alignments: dict[str, PhoneAlignment] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}:{lineno}: invalid JSON: {e}") from None
        if not isinstance(obj, dict) or "id" not in obj or "segments" not in obj:
            raise FormatError(f"{path}:{lineno}: expected {{id, segments}}")
        utt_id = str(obj["id"])
        if utt_id in alignments:
            raise ValidationError(f"{path}:{lineno}: duplicate id {utt_id!r}")
        try:
            segments = [(str(p), int(s), int(e)) for p, s, e in obj["segments"]]
        except (TypeError, ValueError):
            raise FormatError(f"{path}:{lineno}: malformed segment list") from None
        alignment = PhoneAlignment(segments)
        try:
            alignment.validate()
        except ValidationError as e:
            raise ValidationError(f"{path}:{lineno}: {e}") from None
        alignments[utt_id] = alignment
    return alignments


def save_alignments(alignments: dict[str, PhoneAlignment], path) -> None:
    with open(path, "w") as f:
        for utt_id, alignment in alignments.items():
            segs = [[p, s, e] for p, s, e in alignment.segments]
            f.write(json.dumps({"id": utt_id, "segments": segs}) + "\n")


@dataclass
class CorpusMeta:
    """Corpus-wide declarations the formats themselves do not carry."""

    feature_dim: int
    frame_period: float = DEFAULT_FRAME_PERIOD


def load_corpus_meta(path) -> CorpusMeta:
    obj = json.loads(Path(path).read_text())
    return CorpusMeta(feature_dim=int(obj["feature_dim"]),
                      frame_period=float(obj.get("frame_period", DEFAULT_FRAME_PERIOD)))


def save_corpus_meta(meta: CorpusMeta, path) -> None:
    Path(path).write_text(json.dumps({"feature_dim": meta.feature_dim,
                                      "frame_period": meta.frame_period}) + "\n")


def normalize_score(score_raw: float) -> float:
    """Map a raw [0, 4] rating onto the scorer's [-1, 1] target range."""
    if not (SCORE_MIN <= score_raw <= SCORE_MAX):
        raise ValidationError(f"score {score_raw} outside [{SCORE_MIN}, {SCORE_MAX}]")
    return score_raw / 2.0 - 1.0


def denormalize_score(score_norm: float) -> float:
    if not (-1.0 <= score_norm <= 1.0):
        raise ValidationError(f"normalized score {score_norm} outside [-1, 1]")
    return 2.0 * (score_norm + 1.0)


def pool_phone_features(m: FeatureMatrix, alignment: PhoneAlignment,
                        frame_period: float = DEFAULT_FRAME_PERIOD):
    """Mean-pool frames per aligned segment.

    Returns (phone_features NxD float64, durations in seconds, phone labels).
    """
    if frame_period <= 0:
        raise ValidationError(f"frame period must be positive, got {frame_period}")
    alignment.validate(num_frames=m.num_frames)
    feats = m.values.astype(np.float64)
    rows, durations, labels = [], [], []
    for label, start, end in alignment.segments:
        if start == end:
            raise ValidationError(f"empty segment {label!r} at frame {start}")
        rows.append(feats[start:end].mean(axis=0))
        durations.append((end - start) * frame_period)
        labels.append(label)
    return np.stack(rows), np.asarray(durations, dtype=np.float64), labels
