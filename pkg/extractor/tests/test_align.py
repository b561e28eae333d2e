"""Alignment conversion tests."""

import json

import pytest

from sslfeat.align import convert_alignment, convert_file, parse_segment_file
from sslfeat.errors import AlignmentError


def test_exact_multiple_example():
    assert convert_alignment([("AA", 0.00, 0.04)], 0.02) == [("AA", 0, 2)]


def test_floor_ceil_widening_example():
    assert convert_alignment([("sil", 0.03, 0.05)], 0.02) == [("sil", 1, 3)]


def test_exact_multiples_survive_binary_rounding():
    # 0.06/0.02 is not a representable 3.0; the snap guard must still land on it.
    assert convert_alignment([("AA", 0.04, 0.06)], 0.02) == [("AA", 2, 3)]
    assert convert_alignment([("AA", 0.0, 1.0)], 0.02) == [("AA", 0, 50)]


def test_rounding_overlap_is_resolved_not_doubled():
    got = convert_alignment([("A", 0.00, 0.03), ("B", 0.03, 0.05)], 0.02)
    assert got == [("A", 0, 2), ("B", 2, 3)]
    covered = [f for _, s, e in got for f in range(s, e)]
    assert len(covered) == len(set(covered))


def test_reversed_segment_rejected():
    with pytest.raises(AlignmentError, match="reversed"):
        convert_alignment([("A", 0.10, 0.05)], 0.02)


def test_source_overlap_in_seconds_rejected():
    with pytest.raises(AlignmentError, match="overlaps"):
        convert_alignment([("A", 0.00, 0.05), ("B", 0.03, 0.08)], 0.02)


def test_max_frames_clips_and_drops():
    got = convert_alignment([("A", 0.00, 0.04), ("B", 0.04, 0.10)], 0.02, max_frames=3)
    assert got == [("A", 0, 2), ("B", 2, 3)]
    assert convert_alignment([("A", 0.10, 0.20)], 0.02, max_frames=3) == []


def test_parse_groups_sorts_and_validates(tmp_path):
    src = tmp_path / "segments.txt"
    src.write_text(
        "# comment line\n"
        "u1 AA 0.00 0.04\n"
        "u2 sil 0.00 0.02\n"
        "\n"
        "u1 sil 0.04 0.06  # trailing comment\n"
    )
    table = parse_segment_file(src)
    assert set(table) == {"u1", "u2"}
    assert table["u1"] == [("AA", 0.00, 0.04), ("sil", 0.04, 0.06)]


@pytest.mark.parametrize("line,message", [
    ("u1 AA 0.00", "fields"),
    ("u1 AA zero 0.04", "seconds"),
    ("u1 AA -0.01 0.04", "negative"),
    ("u1 AA 0.05 0.01", "reversed"),
])
def test_parse_rejects_bad_lines(tmp_path, line, message):
    src = tmp_path / "segments.txt"
    src.write_text(line + "\n")
    with pytest.raises(AlignmentError, match=message):
        parse_segment_file(src)


def test_parse_rejects_overlap_in_seconds(tmp_path):
    src = tmp_path / "segments.txt"
    src.write_text("u1 AA 0.00 0.05\nu1 BB 0.03 0.08\n")
    with pytest.raises(AlignmentError, match="overlaps"):
        parse_segment_file(src)


def test_convert_file_emits_loadable_alignment_lines(tmp_path):
    src = tmp_path / "segments.txt"
    src.write_text("u1 AA 0.00 0.04\nu1 sil 0.04 0.06\nu2 BB 0.01 0.03\n")
    out = tmp_path / "alignments.jsonl"
    assert convert_file(src, out, frame_period=0.02) == 2
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert rows[0] == {"id": "u1", "segments": [["AA", 0, 2], ["sil", 2, 3]]}
    assert rows[1] == {"id": "u2", "segments": [["BB", 0, 2]]}

    # The scoring package must accept the emitted format unchanged.
    fluscore_corpus = pytest.importorskip("fluscore.corpus")
    alignments = fluscore_corpus.load_alignments(out)
    alignments["u1"].validate(num_frames=3)


def test_converted_segments_never_cover_a_frame_twice():
    import random

    rng = random.Random(5)
    for _ in range(200):
        t = 0.0
        segments = []
        for n in range(rng.randint(1, 10)):
            t += rng.random() * 0.05  # optional gap
            start = t
            t += 0.01 + rng.random() * 0.2
            segments.append((f"P{n}", round(start, 4), round(t, 4)))
        period = rng.choice([0.01, 0.02, 0.025])
        got = convert_alignment(segments, period)
        prev_end = 0
        for _, s, e in got:
            assert 0 <= prev_end <= s < e
            prev_end = e
