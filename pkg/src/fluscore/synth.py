"""Synthetic corpus with planted fluency structure.

Each utterance alternates "speech" segments (frames sampled around one of
n_speech_clusters well-separated Gaussian centers, cyclic pseudo-phone
labels P0, P1, ...) with "sil" pause segments (frames around a dedicated
pause center). The ground-truth score is a deterministic function of the
planted pause share: score_raw = 4 * (1 - pause_frames / total_frames).

A pipeline that clusters frames and regresses scores can therefore be
checked end to end against a known answer at desk scale.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (
    CorpusMeta,
    FeatureMatrix,
    PhoneAlignment,
    PhoneInventory,
    SILENCE_LABEL,
    save_alignments,
    save_corpus_meta,
    save_phone_inventory,
    write_feature_matrix,
)
from .errors import ValidationError

SPLIT_NAMES = ("train", "dev", "test")
# Center separation per unit spread; >= 10x spread keeps planted clusters
# recoverable by K-means.
CENTER_GAIN = 10.0


@dataclass
class SynthConfig:
    n_train: int = 500
    n_dev: int = 100
    n_test: int = 100
    feature_dim: int = 16
    n_speech_clusters: int = 8
    cluster_spread: float = 1.0
    frame_period: float = 0.02
    min_frames: int = 50
    max_frames: int = 400
    pause_ratio_min: float = 0.0
    pause_ratio_max: float = 0.6
    seed: int = 0

    def __post_init__(self):
        for name in ("n_train", "n_dev", "n_test", "feature_dim", "n_speech_clusters",
                     "min_frames", "max_frames"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.cluster_spread <= 0 or self.frame_period <= 0:
            raise ValidationError("cluster_spread and frame_period must be positive")
        if self.min_frames > self.max_frames:
            raise ValidationError(
                f"min_frames {self.min_frames} > max_frames {self.max_frames}"
            )
        if self.min_frames < 10:
            raise ValidationError("min_frames below 10 leaves no room for segment structure")
        if not (0.0 <= self.pause_ratio_min <= self.pause_ratio_max <= 0.8):
            raise ValidationError("pause ratio range must satisfy 0 <= lo <= hi <= 0.8")
        # One axis per speech center plus one for the pause center.
        if self.feature_dim < self.n_speech_clusters + 1:
            raise ValidationError(
                f"feature_dim {self.feature_dim} < n_speech_clusters + 1 "
                f"= {self.n_speech_clusters + 1}"
            )

    def centers(self) -> np.ndarray:
        """(n_speech_clusters + 1, feature_dim); the last row is the pause center."""
        c = np.zeros((self.n_speech_clusters + 1, self.feature_dim))
        for j in range(self.n_speech_clusters + 1):
            c[j, j] = CENTER_GAIN * self.cluster_spread
        return c


def _compose(total: int, parts: int, rng: np.random.Generator) -> list[int]:
    """Split `total` into `parts` positive integers, uniformly at random."""
    if parts == 1:
        return [total]
    cuts = np.sort(rng.choice(total - 1, size=parts - 1, replace=False)) + 1
    bounds = np.concatenate([[0], cuts, [total]])
    return np.diff(bounds).tolist()


def _build_utterance(cfg: SynthConfig, split_idx: int, utt_idx: int):
    """Frames, alignment and pause share for one utterance, seeded on its own."""
    rng = np.random.default_rng([cfg.seed, split_idx, utt_idx])
    centers = cfg.centers()
    total = int(rng.integers(cfg.min_frames, cfg.max_frames + 1))
    ratio = rng.uniform(cfg.pause_ratio_min, cfg.pause_ratio_max)
    pause_budget = min(int(round(ratio * total)), total - 1)
    speech_budget = total - pause_budget

    n_speech = int(rng.integers(3, 13))
    n_speech = min(n_speech, speech_budget)
    speech_lens = _compose(speech_budget, n_speech, rng)

    gaps = n_speech - 1
    if pause_budget == 0:
        pause_lens: list[int] = []
        pause_slots: list[int] = []
    else:
        n_pause = min(gaps, pause_budget) if gaps else 0
        if n_pause == 0:
            # Degenerate single-speech-segment draw: park the pause at the end.
            pause_lens = [pause_budget]
            pause_slots = [gaps]
        else:
            pause_lens = _compose(pause_budget, n_pause, rng)
            pause_slots = sorted(rng.choice(gaps, size=n_pause, replace=False).tolist())

    segments: list[tuple[str, int]] = []  # (label, length) in utterance order
    slot_map = dict(zip(pause_slots, pause_lens))
    for s, length in enumerate(speech_lens):
        segments.append((f"P{s % cfg.n_speech_clusters}", length))
        if s in slot_map:
            segments.append((SILENCE_LABEL, slot_map[s]))

    frames = np.empty((total, cfg.feature_dim), dtype=np.float64)
    align: list[tuple[str, int, int]] = []
    cursor = 0
    for label, length in segments:
        center = centers[-1] if label == SILENCE_LABEL else centers[int(label[1:])]
        frames[cursor:cursor + length] = center + cfg.cluster_spread * rng.standard_normal(
            (length, cfg.feature_dim))
        align.append((label, cursor, cursor + length))
        cursor += length
    assert cursor == total
    pause_ratio = pause_budget / total
    return FeatureMatrix(frames.astype(np.float32)), PhoneAlignment(align), pause_ratio


def generate(cfg: SynthConfig, out_dir, threads: int = 1) -> dict:
    """Write a full synthetic corpus; byte-identical for a fixed config."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    counts = {"train": cfg.n_train, "dev": cfg.n_dev, "test": cfg.n_test}

    jobs = []
    for split_idx, split in enumerate(SPLIT_NAMES):
        for utt_idx in range(counts[split]):
            jobs.append((split_idx, split, utt_idx))

    def run(job):
        split_idx, split, utt_idx = job
        return _build_utterance(cfg, split_idx, utt_idx)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            built = list(pool.map(run, jobs))
    else:
        built = [run(job) for job in jobs]

    manifest_lines = []
    alignments: dict[str, PhoneAlignment] = {}
    truth_lines = []
    for (split_idx, split, utt_idx), (m, alignment, pause_ratio) in zip(jobs, built):
        utt_id = f"{split}_{utt_idx:04d}"
        rel = f"features/{utt_id}.fmx"
        write_feature_matrix(m, out / rel)
        score = 4.0 * (1.0 - pause_ratio)
        manifest_lines.append(json.dumps(
            {"id": utt_id, "path": rel, "score": score, "split": split}))
        alignments[utt_id] = alignment
        truth_lines.append(json.dumps({"id": utt_id, "pause_ratio": pause_ratio}))

    (out / "manifest.jsonl").write_text("".join(line + "\n" for line in manifest_lines))
    save_alignments(alignments, out / "alignments.jsonl")
    (out / "truth.jsonl").write_text("".join(line + "\n" for line in truth_lines))
    inventory = PhoneInventory([SILENCE_LABEL] + [f"P{j}" for j in range(cfg.n_speech_clusters)])
    save_phone_inventory(inventory, out / "phones.txt")
    save_corpus_meta(CorpusMeta(feature_dim=cfg.feature_dim, frame_period=cfg.frame_period),
                     out / "meta.json")
    return {"utterances": len(jobs), **counts}
