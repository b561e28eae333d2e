"""Convert externally computed phone time stamps to frame alignments.

Input: text lines `utt_id phone start_seconds end_seconds` (whitespace
separated, `#` comments). Output: the scorer's alignment JSON lines,
`{"id": ..., "segments": [[label, start_frame, end_frame], ...]}` with
end exclusive.

Frame mapping: start_frame = floor(start/frame_period), end_frame =
ceil(end/frame_period). floor/ceil widens segments so no audible frame is
dropped at the edges; overlaps that this rounding introduces between
adjacent segments are resolved by advancing the later start, so no frame is
covered twice.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from .errors import AlignmentError

Segment = tuple[str, float, float]

# Times arrive as decimal seconds; snap near-integer frame ratios before
# floor/ceil so exact multiples are not undone by binary rounding.
_SNAP = 1e-9


def _frame(q: float) -> float:
    r = round(q)
    return float(r) if abs(q - r) < _SNAP else q


def parse_segment_file(path) -> dict[str, list[Segment]]:
    """Read and validate per-utterance second-level segments, in time order."""
    table: dict[str, list[Segment]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 4:
            raise AlignmentError(
                f"{path}:{lineno}: expected `utt_id phone start end`, got {len(parts)} fields"
            )
        utt_id, label = parts[0], parts[1]
        try:
            start, end = float(parts[2]), float(parts[3])
        except ValueError:
            raise AlignmentError(f"{path}:{lineno}: times must be seconds, "
                                 f"got {parts[2]!r} {parts[3]!r}") from None
        if start < 0:
            raise AlignmentError(f"{path}:{lineno}: negative start time {start}")
        if end < start:
            raise AlignmentError(
                f"{path}:{lineno}: reversed segment {label!r}: [{start}, {end}]"
            )
        table.setdefault(utt_id, []).append((label, start, end))
    for utt_id, segments in table.items():
        segments.sort(key=lambda seg: (seg[1], seg[2]))
        for (_, _, prev_end), (label, start, _) in zip(segments, segments[1:]):
            if start < prev_end - _SNAP:
                raise AlignmentError(
                    f"{path}: utterance {utt_id!r}: segment {label!r} at {start}s "
                    f"overlaps previous segment ending {prev_end}s"
                )
    return table


def convert_alignment(segments: list[Segment], frame_period: float,
                      max_frames: int | None = None) -> list[tuple[str, int, int]]:
    """Map second-level segments to non-overlapping frame segments."""
    if frame_period <= 0:
        raise AlignmentError(f"frame_period must be positive, got {frame_period}")
    out: list[tuple[str, int, int]] = []
    prev_end = 0
    prev_end_seconds = 0.0
    for label, start, end in segments:
        if end < start:
            raise AlignmentError(f"reversed segment {label!r}: [{start}, {end}]")
        if start < prev_end_seconds - _SNAP:
            raise AlignmentError(
                f"segment {label!r} at {start}s overlaps previous segment "
                f"ending {prev_end_seconds}s"
            )
        prev_end_seconds = max(prev_end_seconds, end)
        sf = max(math.floor(_frame(start / frame_period)), 0, prev_end)
        ef = math.ceil(_frame(end / frame_period))
        if max_frames is not None:
            ef = min(ef, max_frames)
        if ef <= sf:  # fully absorbed by clipping or the previous segment
            continue
        out.append((label, sf, ef))
        prev_end = ef
    return out


def convert_file(in_path, out_path, frame_period: float,
                 max_frames: dict[str, int] | None = None) -> int:
    """Convert a whole segment file; returns the number of utterances."""
    table = parse_segment_file(in_path)
    with open(out_path, "w") as f:
        for utt_id, segments in table.items():
            limit = None if max_frames is None else max_frames.get(utt_id)
            converted = convert_alignment(segments, frame_period, max_frames=limit)
            f.write(json.dumps({"id": utt_id,
                                "segments": [[p, s, e] for p, s, e in converted]}) + "\n")
    return len(table)
