"""Score evaluation (Pearson correlation, MSE) and the phone/cluster-index
co-occurrence analysis."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import PhoneAlignment, PhoneInventory
from .errors import ValidationError


def pcc(pred, truth) -> float:
    """Sample Pearson correlation; a constant series is an error, not 0."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValidationError(f"pcc needs equal-length vectors, got {pred.shape} vs {truth.shape}")
    n = pred.size
    if n < 2:
        raise ValidationError(f"pcc needs at least 2 points, got {n}")
    px = pred - pred.mean()
    ty = truth - truth.mean()
    sx = float(np.sqrt((px * px).sum()))
    sy = float(np.sqrt((ty * ty).sum()))
    if sx == 0.0 or sy == 0.0:
        raise ValidationError("pcc undefined: a series is constant")
    return float((px * ty).sum() / (sx * sy))


def mse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValidationError(f"mse needs equal shapes, got {pred.shape} vs {truth.shape}")
    if pred.size < 1:
        raise ValidationError("mse over empty vectors")
    return float(np.mean((pred - truth) ** 2))


def write_eval_report(path, split: str, pred, truth) -> None:
    report = {"split": split, "n": int(np.asarray(pred).size),
              "pcc": pcc(pred, truth), "mse": mse(pred, truth)}
    Path(path).write_text(json.dumps(report, sort_keys=True) + "\n")


@dataclass
class CooccurrenceMatrix:
    """Frame counts per (phone, cluster index); rows ordered by the inventory."""

    counts: np.ndarray  # (P, K) int64
    row_labels: list[str]
    total_frames: int  # aligned frames, equals counts.sum()
    unaligned_frames: int  # frames outside every alignment segment


def build_cooccurrence(alignments: dict[str, PhoneAlignment],
                       cluster_sequences: dict[str, np.ndarray],
                       inventory: PhoneInventory, k: int) -> CooccurrenceMatrix:
    """Count frames by (alignment phone, cluster index) over utterances
    present in both maps. Frames no segment covers go to the unaligned tally.
    """
    counts = np.zeros((len(inventory), k), dtype=np.int64)
    unaligned = 0
    ids = [u for u in cluster_sequences if u in alignments]
    for utt_id in ids:
        indexes = np.asarray(cluster_sequences[utt_id])
        if indexes.size and (indexes.min() < 0 or indexes.max() >= k):
            raise ValidationError(f"utterance {utt_id!r}: cluster index outside [0, {k})")
        alignment = alignments[utt_id]
        alignment.validate(num_frames=len(indexes), labels=inventory)
        covered = 0
        for label, start, end in alignment.segments:
            row = inventory.index(label)
            counts[row] += np.bincount(indexes[start:end], minlength=k)
            covered += end - start
        unaligned += len(indexes) - covered
    return CooccurrenceMatrix(counts=counts, row_labels=list(inventory.labels),
                              total_frames=int(counts.sum()), unaligned_frames=unaligned)


def conditional_phone_given_index(matrix: CooccurrenceMatrix):
    """Column-normalize counts into P(phone | index).

    Returns (probs, zero_columns): untouched all-zero columns are listed,
    not an error.
    """
    counts = matrix.counts.astype(np.float64)
    col_sums = counts.sum(axis=0)
    zero_columns = [int(j) for j in np.flatnonzero(col_sums == 0)]
    safe = np.where(col_sums > 0, col_sums, 1.0)
    return counts / safe[None, :], zero_columns


def export_heatmap_data(probs: np.ndarray, row_labels: list[str], path) -> None:
    """CSV: header of cluster indexes, first column phone labels, 6 decimals."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != len(row_labels):
        raise ValidationError(
            f"probability matrix {probs.shape} does not match {len(row_labels)} labels"
        )
    with open(path, "w") as f:
        f.write("phone," + ",".join(str(j) for j in range(probs.shape[1])) + "\n")
        for label, row in zip(row_labels, probs):
            f.write(label + "," + ",".join(f"{v:.6f}" for v in row) + "\n")


def read_heatmap_data(path):
    """Inverse of export_heatmap_data, for round-trip checks and tooling."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValidationError(f"{path}: empty heatmap file")
    labels = []
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        labels.append(cells[0])
        rows.append([float(v) for v in cells[1:]])
    k = len(lines[0].split(",")) - 1
    probs = np.array(rows, dtype=np.float64).reshape(len(rows), k)
    return probs, labels
