"""Corpus IO: feature files, manifests, alignments, score mapping, pooling."""

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluscore.corpus import (
    FeatureMatrix,
    PhoneAlignment,
    PhoneInventory,
    denormalize_score,
    load_alignments,
    load_manifest,
    load_phone_inventory,
    normalize_score,
    peek_feature_shape,
    pool_phone_features,
    read_feature_matrix,
    save_alignments,
    save_manifest,
    save_phone_inventory,
    write_feature_matrix,
)
from fluscore.errors import FormatError, ValidationError


def test_feature_file_layout_matches_struct_packing(tmp_path):
    # Oracle: assemble the expected bytes with struct/tobytes directly.
    values = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = tmp_path / "a.fmx"
    write_feature_matrix(FeatureMatrix(values), path)
    expected = b"FMX1" + struct.pack("<II", 2, 3) + values.astype("<f4").tobytes()
    assert path.read_bytes() == expected


def test_feature_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.standard_normal((1, 1024)).astype(np.float32)
    path = tmp_path / "b.fmx"
    write_feature_matrix(FeatureMatrix(values), path)
    back = read_feature_matrix(path)
    assert back.values.dtype == np.float32
    assert np.array_equal(back.values.view(np.uint32), values.view(np.uint32))


@settings(max_examples=30, deadline=None)
@given(
    t=st.integers(min_value=1, max_value=20),
    d=st.integers(min_value=1, max_value=20),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_feature_roundtrip_property(tmp_path_factory, t, d, seed):
    rng = np.random.default_rng(seed)
    values = (rng.standard_normal((t, d)) * 10).astype(np.float32)
    path = tmp_path_factory.mktemp("fmx") / "m.fmx"
    write_feature_matrix(FeatureMatrix(values), path)
    back = read_feature_matrix(path)
    assert np.array_equal(back.values.view(np.uint32), values.view(np.uint32))
    assert peek_feature_shape(path) == (t, d)


def test_feature_read_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.fmx"
    path.write_bytes(b"XXXX" + struct.pack("<II", 1, 1) + b"\x00" * 4)
    with pytest.raises(FormatError, match="bad magic at byte 0"):
        read_feature_matrix(path)


def test_feature_read_rejects_truncated_payload(tmp_path):
    values = np.ones((2, 3), dtype=np.float32)
    path = tmp_path / "t.fmx"
    write_feature_matrix(FeatureMatrix(values), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(FormatError, match=f"truncated payload at byte {len(raw) - 5}"):
        read_feature_matrix(path)


def test_feature_read_rejects_trailing_bytes(tmp_path):
    values = np.ones((2, 2), dtype=np.float32)
    path = tmp_path / "t.fmx"
    write_feature_matrix(FeatureMatrix(values), path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError, match="trailing data"):
        read_feature_matrix(path)


def test_feature_read_rejects_nan_and_names_offset(tmp_path):
    values = np.zeros((1, 4), dtype=np.float32)
    path = tmp_path / "n.fmx"
    write_feature_matrix(FeatureMatrix(values), path)
    raw = bytearray(path.read_bytes())
    # Overwrite element 2 (byte 12 + 4*2 = 20) with a NaN pattern.
    raw[20:24] = struct.pack("<f", float("nan"))
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="non-finite value at byte 20"):
        read_feature_matrix(path)


def test_feature_matrix_rejects_bad_shapes():
    with pytest.raises(ValidationError):
        FeatureMatrix(np.zeros(3, dtype=np.float32))
    with pytest.raises(ValidationError):
        FeatureMatrix(np.zeros((0, 4), dtype=np.float32))
    with pytest.raises(ValidationError):
        FeatureMatrix(np.array([[np.inf]], dtype=np.float32))


def _write_manifest(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))


def test_manifest_roundtrip(tmp_path):
    rows = [
        {"id": "u1", "path": "feats/u1.fmx", "score": 3.5, "split": "train"},
        {"id": "u2", "path": "feats/u2.fmx", "score": 0.0, "split": "dev"},
    ]
    path = tmp_path / "manifest.jsonl"
    _write_manifest(path, rows)
    records = load_manifest(path)
    assert [r.id for r in records] == ["u1", "u2"]
    assert records[0].score_raw == 3.5
    assert records[0].feature_path == tmp_path / "feats/u1.fmx"
    out = tmp_path / "copy.jsonl"
    save_manifest(records, out)
    again = load_manifest(out)
    assert [(r.id, r.score_raw, r.split) for r in again] == [
        (r.id, r.score_raw, r.split) for r in records
    ]


def test_manifest_resolves_against_features_dir(tmp_path):
    path = tmp_path / "manifest.jsonl"
    _write_manifest(path, [{"id": "u", "path": "u.fmx", "score": 2, "split": "test"}])
    records = load_manifest(path, features_dir=tmp_path / "elsewhere")
    assert records[0].feature_path == tmp_path / "elsewhere" / "u.fmx"


@pytest.mark.parametrize(
    "row,message",
    [
        ({"id": "u", "path": "p", "score": 2}, "missing key 'split'"),
        ({"id": "u", "path": "p", "score": 4.5, "split": "train"}, "outside"),
        ({"id": "u", "path": "p", "score": -0.1, "split": "train"}, "outside"),
        ({"id": "u", "path": "p", "score": 1, "split": "eval"}, "unknown split"),
    ],
)
def test_manifest_rejects_bad_rows(tmp_path, row, message):
    path = tmp_path / "m.jsonl"
    _write_manifest(path, [row])
    with pytest.raises(ValidationError, match=message):
        load_manifest(path)


def test_manifest_rejects_duplicate_ids(tmp_path):
    path = tmp_path / "m.jsonl"
    row = {"id": "u", "path": "p", "score": 1, "split": "train"}
    _write_manifest(path, [row, row])
    with pytest.raises(ValidationError, match="duplicate id 'u'"):
        load_manifest(path)


def test_manifest_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(
        json.dumps({"id": "a", "path": "p", "score": 1, "split": "train"}) + "\nnot json\n"
    )
    with pytest.raises(FormatError, match=":2:"):
        load_manifest(path)


def test_alignment_roundtrip_and_validation(tmp_path):
    alignments = {
        "u1": PhoneAlignment([("AA", 0, 2), ("sil", 2, 3)]),
        "u2": PhoneAlignment([("B", 0, 1)]),
    }
    path = tmp_path / "ali.jsonl"
    save_alignments(alignments, path)
    back = load_alignments(path)
    assert back["u1"].segments == [("AA", 0, 2), ("sil", 2, 3)]
    assert back["u2"].segments == [("B", 0, 1)]


def test_alignment_rejects_overlap(tmp_path):
    path = tmp_path / "ali.jsonl"
    path.write_text(json.dumps({"id": "u", "segments": [["A", 0, 3], ["B", 2, 4]]}) + "\n")
    with pytest.raises(ValidationError, match="overlapping"):
        load_alignments(path)


def test_alignment_validate_against_frame_count():
    alignment = PhoneAlignment([("A", 0, 5)])
    with pytest.raises(ValidationError, match="4 frames"):
        alignment.validate(num_frames=4)
    alignment.validate(num_frames=5)


def test_phone_inventory_requires_unique_labels_and_sil(tmp_path):
    with pytest.raises(ValidationError, match="unique"):
        PhoneInventory(["AA", "AA", "sil"])
    with pytest.raises(ValidationError, match="'sil'"):
        PhoneInventory(["AA", "B"])
    inv = PhoneInventory(["sil", "AA", "B"])
    assert inv.index("AA") == 1
    assert "B" in inv and "ZZ" not in inv
    path = tmp_path / "phones.txt"
    save_phone_inventory(inv, path)
    assert load_phone_inventory(path).labels == ["sil", "AA", "B"]


def test_score_mapping_endpoints():
    assert normalize_score(0.0) == -1.0
    assert normalize_score(4.0) == 1.0
    assert normalize_score(2.0) == 0.0
    assert denormalize_score(-1.0) == 0.0
    assert denormalize_score(1.0) == 4.0
    with pytest.raises(ValidationError):
        normalize_score(4.2)
    with pytest.raises(ValidationError):
        denormalize_score(1.01)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=0.0, max_value=4.0))
def test_score_mapping_roundtrip(score):
    assert abs(denormalize_score(normalize_score(score)) - score) < 1e-12


def test_pooling_hand_example():
    m = FeatureMatrix(np.array([[0.0], [2.0], [4.0]], dtype=np.float32))
    alignment = PhoneAlignment([("AA", 0, 2), ("sil", 2, 3)])
    feats, durations, labels = pool_phone_features(m, alignment, frame_period=0.02)
    assert np.allclose(feats, [[1.0], [4.0]])
    assert np.allclose(durations, [0.04, 0.02])
    assert labels == ["AA", "sil"]


def test_pooling_rejects_empty_segment():
    m = FeatureMatrix(np.ones((3, 2), dtype=np.float32))
    with pytest.raises(ValidationError, match="empty segment"):
        pool_phone_features(m, PhoneAlignment([("A", 1, 1)]))


@settings(max_examples=30, deadline=None)
@given(
    t=st.integers(min_value=1, max_value=12),
    d=st.integers(min_value=1, max_value=4),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_pooling_unit_segments_is_identity(t, d, seed):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((t, d)).astype(np.float32)
    alignment = PhoneAlignment([("sil", i, i + 1) for i in range(t)])
    feats, durations, _ = pool_phone_features(FeatureMatrix(values), alignment, frame_period=0.01)
    assert np.allclose(feats, values.astype(np.float64))
    assert np.allclose(durations, 0.01)
