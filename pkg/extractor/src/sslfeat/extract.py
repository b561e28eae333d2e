"""Hidden-state extraction from a pretrained wav2vec2-style encoder.

The model is the source of truth for geometry: feature dimension comes from
its hidden size, the frame period from its convolutional stride product over
the audio sample rate. Nothing is hard-coded.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import read_wav
from .errors import AudioError, ExtractionError
from .fmx import write_feature_matrix

DEFAULT_LAYER = 15
FRAGMENT_NAME = "manifest_fragment.jsonl"
META_NAME = "meta.json"


@dataclass
class ExtractionJob:
    audio_paths: list
    model_id: str
    out_dir: Path
    layer: int = DEFAULT_LAYER
    workers: int = 1
    # Derived from the loaded model and the audio sample rate during extract().
    frame_period: float | None = field(default=None)

    def __post_init__(self):
        self.audio_paths = [Path(p) for p in self.audio_paths]
        self.out_dir = Path(self.out_dir)
        if not self.audio_paths:
            raise ExtractionError("no audio files to extract")
        if self.layer < 0:
            raise ExtractionError(f"layer index must be >= 0, got {self.layer}")
        if self.workers < 1:
            raise ExtractionError(f"workers must be >= 1, got {self.workers}")
        ids = [p.stem for p in self.audio_paths]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise ExtractionError(f"duplicate utterance id {dup!r} (file stems must be unique)")


def _load_model(model_id: str):
    import torch
    from transformers import AutoModel

    # Inference must be byte-reproducible across runs and worker processes.
    torch.manual_seed(0)
    torch.use_deterministic_algorithms(True)
    try:
        model = AutoModel.from_pretrained(model_id)
    except Exception as e:
        raise ExtractionError(f"cannot load model {model_id!r}: {e}") from None
    model.eval()
    return model


def _check_layer(model, layer: int) -> None:
    depth = int(model.config.num_hidden_layers)
    # hidden_states[0] is the pre-transformer projection; [i] is block i.
    if layer > depth:
        raise ExtractionError(
            f"layer {layer} out of range: model has {depth} transformer layers "
            f"(valid 0..{depth})"
        )


def stride_product(model) -> int:
    return int(np.prod(model.config.conv_stride))


def expected_frames(model, num_samples: int) -> int:
    """Frame count implied by the conv stack's documented strides alone."""
    return num_samples // stride_product(model)


def _extract_one(model, layer: int, wav_path: Path, out_dir: Path):
    import torch

    samples, rate = read_wav(wav_path)
    with torch.no_grad():
        x = torch.from_numpy(samples).unsqueeze(0)
        try:
            out = model(x, output_hidden_states=True)
        except Exception as e:
            raise ExtractionError(f"{wav_path}: extraction failed: {e}") from None
    h = out.hidden_states[layer][0].cpu().numpy()
    frames = write_feature_matrix(h, out_dir / f"{wav_path.stem}.fmx")
    return wav_path.stem, frames, rate


_WORKER_MODEL = None
_WORKER_ARGS: tuple | None = None


def _init_worker(model_id: str, layer: int, out_dir: str) -> None:
    global _WORKER_MODEL, _WORKER_ARGS
    _WORKER_MODEL = _load_model(model_id)
    _WORKER_ARGS = (layer, Path(out_dir))


def _run_worker(wav_path: str):
    layer, out_dir = _WORKER_ARGS
    return _extract_one(_WORKER_MODEL, layer, Path(wav_path), out_dir)


def extract(job: ExtractionJob) -> dict:
    """Write one .fmx per audio file plus manifest fragment and metadata.

    Returns {"utterances", "feature_dim", "frame_period", "fragment"}.
    """
    missing = [p for p in job.audio_paths if not p.is_file()]
    if missing:
        raise AudioError(f"audio file not found: {missing[0]}")
    job.out_dir.mkdir(parents=True, exist_ok=True)

    model = _load_model(job.model_id)
    _check_layer(model, job.layer)
    hidden = int(model.config.hidden_size)

    if job.workers == 1:
        results = [_extract_one(model, job.layer, p, job.out_dir) for p in job.audio_paths]
    else:
        with ProcessPoolExecutor(
            max_workers=job.workers, initializer=_init_worker,
            initargs=(job.model_id, job.layer, str(job.out_dir)),
        ) as pool:
            results = list(pool.map(_run_worker, [str(p) for p in job.audio_paths]))

    rates = sorted({rate for _, _, rate in results})
    if len(rates) > 1:
        raise AudioError(f"mixed sample rates across inputs: {rates}")
    job.frame_period = stride_product(model) / rates[0]

    fragment = job.out_dir / FRAGMENT_NAME
    with open(fragment, "w") as f:
        for utt_id, frames, _ in results:
            f.write(json.dumps({"id": utt_id, "path": f"{utt_id}.fmx",
                                "frames": frames}) + "\n")
    (job.out_dir / META_NAME).write_text(json.dumps(
        {"feature_dim": hidden, "frame_period": job.frame_period}) + "\n")
    return {"utterances": len(results), "feature_dim": hidden,
            "frame_period": job.frame_period, "fragment": str(fragment)}
