"""The two fluency scorers.

Both share the same skeleton: a preprocessing layer (linear, LayerNorm,
Tanh), a two-layer BLSTM, masked mean pooling over time, and a dense +
Tanh head emitting one normalized score in (-1, 1).

They differ in the sequence fed to the BLSTM:
  asr_free   per frame: [preprocessed SSL feature ; cluster-index embedding]
  asr_based  per aligned phone: [phone embedding + preprocessed pooled
             feature ; z-normalized duration scalar]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nnet
from .corpus import (
    DEFAULT_FRAME_PERIOD,
    FeatureMatrix,
    PhoneInventory,
    denormalize_score,
    pool_phone_features,
    read_feature_matrix,
)
from .errors import ValidationError
from .nnet import autograd as ag


@dataclass
class AsrFreeScorerConfig:
    feature_dim: int
    hidden_dim: int = 32
    cluster_count: int = 50
    cluster_embed_dim: int = 6
    blstm_layers: int = 2

    variant = "asr_free"

    def __post_init__(self):
        for name in ("feature_dim", "hidden_dim", "cluster_count", "cluster_embed_dim",
                     "blstm_layers"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def blstm_input_dim(self) -> int:
        return self.hidden_dim + self.cluster_embed_dim


@dataclass
class AsrBasedScorerConfig:
    feature_dim: int
    phone_inventory_size: int
    hidden_dim: int = 32
    blstm_layers: int = 2
    # Duration z-normalization statistics, filled in from the training split.
    duration_mean: float = 0.0
    duration_std: float = 1.0

    variant = "asr_based"

    def __post_init__(self):
        for name in ("feature_dim", "phone_inventory_size", "hidden_dim", "blstm_layers"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.duration_std <= 0:
            raise ValidationError(f"duration_std must be positive, got {self.duration_std}")

    @property
    def blstm_input_dim(self) -> int:
        return self.hidden_dim + 1


def config_to_dict(cfg) -> dict:
    out = {"variant": cfg.variant, "feature_dim": cfg.feature_dim,
           "hidden_dim": cfg.hidden_dim, "blstm_layers": cfg.blstm_layers}
    if cfg.variant == "asr_free":
        out["cluster_count"] = cfg.cluster_count
        out["cluster_embed_dim"] = cfg.cluster_embed_dim
    else:
        out["phone_inventory_size"] = cfg.phone_inventory_size
        out["duration_mean"] = cfg.duration_mean
        out["duration_std"] = cfg.duration_std
    return out


def config_from_dict(d: dict):
    d = dict(d)
    variant = d.pop("variant", None)
    if variant == "asr_free":
        return AsrFreeScorerConfig(**d)
    if variant == "asr_based":
        return AsrBasedScorerConfig(**d)
    raise ValidationError(f"unknown scorer variant {variant!r}")


@dataclass
class Prediction:
    utterance_id: str
    score_norm: float
    score_denorm: float

    @classmethod
    def from_norm(cls, utterance_id: str, score_norm: float) -> "Prediction":
        return cls(utterance_id, score_norm, denormalize_score(score_norm))


def _uniform(rng, fan_in: int, *shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg, seed: int) -> nnet.ParamSet:
    """Fresh parameters, deterministic in seed.

    Dense and recurrent weights: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
    Biases zero except the LSTM forget gate (+1). Embeddings normal(0, 0.1).
    """
    rng = np.random.default_rng(seed)
    hidden = cfg.hidden_dim
    params = nnet.ParamSet()
    params.add("pre.w", _uniform(rng, cfg.feature_dim, cfg.feature_dim, hidden))
    params.add("pre.b", np.zeros(hidden))
    params.add("pre.ln_gamma", np.ones(hidden))
    params.add("pre.ln_beta", np.zeros(hidden))
    if cfg.variant == "asr_free":
        params.add("emb.cluster", rng.normal(0.0, 0.1, size=(cfg.cluster_count,
                                                             cfg.cluster_embed_dim)))
    else:
        params.add("emb.phone", rng.normal(0.0, 0.1, size=(cfg.phone_inventory_size, hidden)))
    din = cfg.blstm_input_dim
    for layer in range(cfg.blstm_layers):
        for direction in ("fwd", "bwd"):
            b = np.zeros(4 * hidden)
            b[hidden:2 * hidden] = 1.0
            params.add(f"blstm.{layer}.{direction}.w_x", _uniform(rng, din, din, 4 * hidden))
            params.add(f"blstm.{layer}.{direction}.w_h", _uniform(rng, hidden, hidden, 4 * hidden))
            params.add(f"blstm.{layer}.{direction}.b", b)
        din = 2 * hidden
    params.add("head.w", _uniform(rng, 2 * hidden, 2 * hidden, 1))
    params.add("head.b", np.zeros(1))
    return params


def _blstm_layer_params(params: nnet.ParamSet, n_layers: int) -> list:
    return [
        {direction: {"w_x": params[f"blstm.{i}.{direction}.w_x"],
                     "w_h": params[f"blstm.{i}.{direction}.w_h"],
                     "b": params[f"blstm.{i}.{direction}.b"]}
         for direction in ("fwd", "bwd")}
        for i in range(n_layers)
    ]


def _preprocess(params: nnet.ParamSet, x: ag.Tensor) -> ag.Tensor:
    h = nnet.linear_forward(x, params["pre.w"], params["pre.b"])
    h = nnet.layernorm_forward(h, params["pre.ln_gamma"], params["pre.ln_beta"])
    return ag.tanh(h)


def batch_forward(params: nnet.ParamSet, cfg, inputs: dict) -> ag.Tensor:
    """Padded-batch forward to normalized scores, shape (B,).

    inputs: features (B, T, D) float; lengths (B,) ints; plus per variant
    clusters (B, T) ints, or phones (B, T) ints and durations (B, T) seconds.
    Pad positions may hold any in-range values; they are masked out.
    """
    feats = np.asarray(inputs["features"], dtype=np.float64)
    lengths = np.asarray(inputs["lengths"], dtype=np.int64)
    batch, steps, dim = feats.shape
    if dim != cfg.feature_dim:
        raise ValidationError(f"feature dim {dim} != configured {cfg.feature_dim}")
    if lengths.shape != (batch,) or lengths.min() < 1 or lengths.max() > steps:
        raise ValidationError("lengths inconsistent with feature tensor")
    mask = np.arange(steps)[None, :] < lengths[:, None]

    h = _preprocess(params, ag.Tensor(feats))
    if cfg.variant == "asr_free":
        clusters = np.asarray(inputs["clusters"], dtype=np.int64)
        if clusters.shape != (batch, steps):
            raise ValidationError(f"cluster index shape {clusters.shape} != {(batch, steps)}")
        if clusters.min() < 0 or clusters.max() >= cfg.cluster_count:
            raise ValidationError("cluster index outside [0, cluster_count)")
        emb = nnet.embedding_lookup(params["emb.cluster"], clusters)
        z = ag.concat_last([h, emb])
    else:
        phones = np.asarray(inputs["phones"], dtype=np.int64)
        durations = np.asarray(inputs["durations"], dtype=np.float64)
        if phones.shape != (batch, steps) or durations.shape != (batch, steps):
            raise ValidationError("phones/durations shape mismatch")
        if phones.min() < 0 or phones.max() >= cfg.phone_inventory_size:
            raise ValidationError("phone index outside inventory")
        emb = nnet.embedding_lookup(params["emb.phone"], phones)
        z_dur = (durations - cfg.duration_mean) / cfg.duration_std
        z = ag.concat_last([ag.add(emb, h), ag.Tensor(z_dur[:, :, None])])

    out = nnet.bilstm_stack_forward(z, _blstm_layer_params(params, cfg.blstm_layers),
                                    lengths=lengths, mask=mask)
    pooled = nnet.masked_mean_pool(out, mask)
    score = nnet.linear_forward(pooled, params["head.w"], params["head.b"])
    return ag.tanh(ag.reshape(score, (batch,)))


def asrfree_forward(m: FeatureMatrix, clusters, params: nnet.ParamSet,
                    cfg: AsrFreeScorerConfig, utterance_id: str = "") -> Prediction:
    clusters = np.asarray(clusters, dtype=np.int64)
    if clusters.shape != (m.num_frames,):
        raise ValidationError(
            f"cluster sequence length {clusters.shape} != frame count {m.num_frames}"
        )
    with ag.no_grad():
        score = batch_forward(params, cfg, {
            "features": m.values.astype(np.float64)[None],
            "clusters": clusters[None],
            "lengths": np.array([m.num_frames]),
        })
    return Prediction.from_norm(utterance_id, float(score.data[0]))


def asrbased_forward(phone_features, durations, phones, inventory: PhoneInventory,
                     params: nnet.ParamSet, cfg: AsrBasedScorerConfig,
                     utterance_id: str = "") -> Prediction:
    feats = np.asarray(phone_features, dtype=np.float64)
    durations = np.asarray(durations, dtype=np.float64)
    if feats.ndim != 2 or len(durations) != feats.shape[0] or len(phones) != feats.shape[0]:
        raise ValidationError("phone features, durations and labels must share length N")
    idx = np.array([inventory.index(p) for p in phones], dtype=np.int64)
    with ag.no_grad():
        score = batch_forward(params, cfg, {
            "features": feats[None],
            "phones": idx[None],
            "durations": durations[None],
            "lengths": np.array([feats.shape[0]]),
        })
    return Prediction.from_norm(utterance_id, float(score.data[0]))


def collate(items: list[dict]) -> dict:
    """Pad per-utterance input dicts into one batch dict (zero/index-0 pads)."""
    batch = len(items)
    steps = max(it["length"] for it in items)
    dim = items[0]["features"].shape[1]
    out = {
        "features": np.zeros((batch, steps, dim)),
        "lengths": np.array([it["length"] for it in items], dtype=np.int64),
    }
    if "clusters" in items[0]:
        out["clusters"] = np.zeros((batch, steps), dtype=np.int64)
    if "phones" in items[0]:
        out["phones"] = np.zeros((batch, steps), dtype=np.int64)
        out["durations"] = np.zeros((batch, steps))
    for i, it in enumerate(items):
        n = it["length"]
        out["features"][i, :n] = it["features"]
        if "clusters" in it:
            out["clusters"][i, :n] = it["clusters"]
        if "phones" in it:
            out["phones"][i, :n] = it["phones"]
            out["durations"][i, :n] = it["durations"]
    return out


def prepare_utterance(record, cfg, codebook=None, cluster_sequences=None,
                      alignments=None, inventory=None,
                      frame_period: float = DEFAULT_FRAME_PERIOD,
                      feature_cache: dict | None = None) -> dict:
    """Load one utterance into the padded-batch input format (unpadded)."""
    if feature_cache is not None and record.id in feature_cache:
        m = feature_cache[record.id]
    else:
        m = read_feature_matrix(record.feature_path)
        if feature_cache is not None:
            feature_cache[record.id] = m
    if cfg.variant == "asr_free":
        if cluster_sequences is not None:
            if record.id not in cluster_sequences:
                raise ValidationError(f"no cluster sequence for utterance {record.id!r}")
            clusters = np.asarray(cluster_sequences[record.id], dtype=np.int64)
        elif codebook is not None:
            from .codebook import assign

            clusters = assign(codebook, m).astype(np.int64)
        else:
            raise ValidationError("asr_free needs a codebook or precomputed cluster sequences")
        if clusters.shape[0] != m.num_frames:
            raise ValidationError(
                f"utterance {record.id!r}: cluster sequence length {clusters.shape[0]} "
                f"!= frame count {m.num_frames}"
            )
        return {"id": record.id, "features": m.values.astype(np.float64),
                "clusters": clusters, "length": m.num_frames}
    if alignments is None or inventory is None:
        raise ValidationError("asr_based needs alignments and a phone inventory")
    if record.id not in alignments:
        raise ValidationError(f"no alignment for utterance {record.id!r}")
    feats, durations, labels = pool_phone_features(m, alignments[record.id], frame_period)
    idx = np.array([inventory.index(p) for p in labels], dtype=np.int64)
    return {"id": record.id, "features": feats, "phones": idx,
            "durations": durations, "length": len(idx)}


def predict_batch(records, params: nnet.ParamSet, cfg, batch_size: int = 32,
                  **prepare_kwargs) -> list[Prediction]:
    """Predictions in record order; padding cannot leak across utterances."""
    if batch_size < 1:
        raise ValidationError(f"batch_size must be positive, got {batch_size}")
    predictions: list[Prediction] = []
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        items = [prepare_utterance(r, cfg, **prepare_kwargs) for r in chunk]
        with ag.no_grad():
            scores = batch_forward(params, cfg, collate(items))
        predictions.extend(
            Prediction.from_norm(r.id, float(s)) for r, s in zip(chunk, scores.data)
        )
    return predictions


def compute_duration_stats(durations) -> tuple[float, float]:
    """Training-split duration mean/std for the baseline's scalar input."""
    durations = np.concatenate([np.asarray(d, dtype=np.float64).reshape(-1)
                                for d in durations]) if isinstance(durations, list) \
        else np.asarray(durations, dtype=np.float64).reshape(-1)
    if durations.size == 0:
        raise ValidationError("cannot compute duration stats from zero segments")
    mean = float(durations.mean())
    std = float(durations.std())
    if std < 1e-12:
        std = 1.0
    return mean, std
