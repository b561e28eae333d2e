"""K-means codebook over frame features, plus cluster-index sequence IO.

Codebook file (.kmc): magic "KMC1", u32 LE k, u32 LE dim, u64 LE seed,
then k*dim float32 LE centroid values, centroid-major.

Cluster sequence file: JSON lines {"id","indexes"}.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

KMC_MAGIC = b"KMC1"
KMC_HEADER_SIZE = 20
# Distance chunks sized to keep the (chunk, k) scratch matrix around 64 MB.
_CHUNK_BUDGET = 8_000_000


@dataclass
class Codebook:
    k: int
    dim: int
    centroids: np.ndarray  # (k, dim) float64
    seed: int
    inertia: float | None = None  # unknown after loading from disk
    inertia_history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.shape != (self.k, self.dim):
            raise ValidationError(f"centroid shape {c.shape} != ({self.k}, {self.dim})")
        if not np.all(np.isfinite(c)):
            raise ValidationError("centroids contain non-finite values")
        self.centroids = c


def _pairwise_sq_dists(frames: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Exact squared distances, (n, k). Chunking happens in the callers."""
    diff = frames[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _assign_chunked(frames: np.ndarray, centroids: np.ndarray):
    """Return (labels int32, sq distance to own centroid). Ties -> lowest index."""
    n = frames.shape[0]
    k, d = centroids.shape
    chunk = max(1, _CHUNK_BUDGET // max(1, k * d))
    labels = np.empty(n, dtype=np.int32)
    dists = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        sq = _pairwise_sq_dists(frames[start:start + chunk], centroids)
        idx = np.argmin(sq, axis=1)
        labels[start:start + chunk] = idx
        dists[start:start + chunk] = np.take_along_axis(sq, idx[:, None], axis=1)[:, 0]
    return labels, dists


def _init_plusplus(frames: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: sample proportional to squared distance so far."""
    n = frames.shape[0]
    centroids = np.empty((k, frames.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = frames[first]
    sq = np.einsum("nd,nd->n", frames - centroids[0], frames - centroids[0])
    for j in range(1, k):
        total = sq.sum()
        if total > 0:
            probs = sq / total
            pick = int(rng.choice(n, p=probs))
        else:
            # All points coincide with chosen centroids; any pick works.
            pick = int(rng.integers(n))
        centroids[j] = frames[pick]
        d_new = np.einsum("nd,nd->n", frames - centroids[j], frames - centroids[j])
        np.minimum(sq, d_new, out=sq)
    return centroids


def _lloyd_once(frames: np.ndarray, k: int, rng: np.random.Generator,
                max_iters: int, tol: float):
    """One fitting run: k-means++ seeding then Lloyd's iterations.

    Empty clusters are repaired by stealing the point farthest from its own
    centroid, taken only from clusters that still have at least two members.
    Inertia is recorded after each mean update and never increases.
    Stops when the largest centroid movement (L2) drops below tol.
    """
    centroids = _init_plusplus(frames, k, rng)
    history: list[float] = []
    for _ in range(max_iters):
        labels, dists = _assign_chunked(frames, centroids)
        counts = np.bincount(labels, minlength=k)

        empties = np.flatnonzero(counts == 0)
        if empties.size:
            # Steal the globally farthest point whose donor keeps >= 2 members.
            order = np.argsort(-dists, kind="stable")
            cursor = 0
            for target in empties:
                while cursor < order.size and counts[labels[order[cursor]]] < 2:
                    cursor += 1
                if cursor >= order.size:
                    break
                point = order[cursor]
                counts[labels[point]] -= 1
                labels[point] = target
                counts[target] = 1
                cursor += 1

        new_centroids = np.zeros_like(centroids)
        np.add.at(new_centroids, labels, frames)
        occupied = counts > 0
        new_centroids[occupied] /= counts[occupied, None]
        new_centroids[~occupied] = centroids[~occupied]

        _, new_dists = _assign_chunked(frames, new_centroids)
        history.append(float(new_dists.sum()))
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < tol:
            break
    return centroids, history


def fit_kmeans(frames, k: int, seed: int, max_iters: int = 100, tol: float = 1e-4,
               subsample: int | None = None, restarts: int = 10) -> Codebook:
    """Best of `restarts` independent k-means++ / Lloyd's runs (lowest inertia).

    Fully determined by seed: each restart draws from its own child stream,
    and ties between restarts go to the earliest one.
    """
    frames = np.ascontiguousarray(np.asarray(frames, dtype=np.float64))
    if frames.ndim != 2:
        raise ValidationError(f"frames must be 2-D, got shape {frames.shape}")
    n, dim = frames.shape
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if restarts < 1:
        raise ValidationError(f"restarts must be >= 1, got {restarts}")
    if n < k:
        raise ValidationError(f"need at least k={k} frames, got {n}")
    if not np.all(np.isfinite(frames)):
        raise ValidationError("frames contain non-finite values")
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(restarts + 1)]
    if subsample is not None and subsample < n:
        if subsample < k:
            raise ValidationError(f"subsample {subsample} smaller than k={k}")
        pick = streams[0].choice(n, size=subsample, replace=False)
        frames = np.ascontiguousarray(frames[np.sort(pick)])
        n = subsample

    best: tuple[np.ndarray, list[float]] | None = None
    for r in range(restarts):
        centroids, history = _lloyd_once(frames, k, streams[r + 1], max_iters, tol)
        if best is None or (history and history[-1] < best[1][-1]):
            best = (centroids, history)
    centroids, history = best
    return Codebook(k=k, dim=dim, centroids=centroids, seed=seed,
                    inertia=history[-1] if history else None, inertia_history=history)


def assign(codebook: Codebook, m) -> np.ndarray:
    """Map each frame to the index of its nearest centroid (ties: lowest index)."""
    values = np.asarray(getattr(m, "values", m), dtype=np.float64)
    if values.ndim != 2:
        raise ValidationError(f"expected a 2-D feature matrix, got shape {values.shape}")
    if values.shape[1] != codebook.dim:
        raise ValidationError(
            f"feature dim {values.shape[1]} != codebook dim {codebook.dim}"
        )
    labels, _ = _assign_chunked(values, codebook.centroids)
    return labels


def inertia_of(frames, centroids) -> float:
    """Sum of squared distances from each frame to its nearest centroid."""
    frames = np.asarray(frames, dtype=np.float64)
    _, dists = _assign_chunked(frames, np.asarray(centroids, dtype=np.float64))
    return float(dists.sum())


def save_codebook(codebook: Codebook, path) -> None:
    header = struct.pack("<IIQ", codebook.k, codebook.dim, codebook.seed)
    payload = np.ascontiguousarray(codebook.centroids, dtype="<f4").tobytes()
    Path(path).write_bytes(KMC_MAGIC + header + payload)


def load_codebook(path) -> Codebook:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != KMC_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0")
    if len(raw) < KMC_HEADER_SIZE:
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    k, dim, seed = struct.unpack_from("<IIQ", raw, 4)
    expected = KMC_HEADER_SIZE + 4 * k * dim
    if len(raw) < expected:
        raise FormatError(f"{path}: truncated payload at byte {len(raw)}, expected {expected} bytes")
    if len(raw) > expected:
        raise FormatError(f"{path}: trailing data at byte {expected}")
    centroids = np.frombuffer(raw, dtype="<f4", count=k * dim, offset=KMC_HEADER_SIZE)
    centroids = centroids.reshape(k, dim).astype(np.float64)
    return Codebook(k=k, dim=dim, centroids=centroids, seed=seed, inertia=None)


def save_cluster_sequences(sequences: dict[str, np.ndarray], path) -> None:
    with open(path, "w") as f:
        for utt_id, indexes in sequences.items():
            f.write(json.dumps({"id": utt_id, "indexes": np.asarray(indexes).tolist()}) + "\n")


def load_cluster_sequences(path) -> dict[str, np.ndarray]:
    sequences: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}:{lineno}: invalid JSON: {e}") from None
        if not isinstance(obj, dict) or "id" not in obj or "indexes" not in obj:
            raise FormatError(f"{path}:{lineno}: expected {{id, indexes}}")
        utt_id = str(obj["id"])
        if utt_id in sequences:
            raise ValidationError(f"{path}:{lineno}: duplicate id {utt_id!r}")
        indexes = np.asarray(obj["indexes"], dtype=np.int32)
        if indexes.ndim != 1 or (indexes.size and indexes.min() < 0):
            raise ValidationError(f"{path}:{lineno}: indexes must be non-negative integers")
        sequences[utt_id] = indexes
    return sequences
