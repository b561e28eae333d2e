"""Scorer assembly tests.

The core oracle is a second, fully independent forward pass written as
straight-line numpy (plain-exp sigmoid, explicit loops, np.var) that must
agree with the packaged implementation to near machine precision.
"""

import numpy as np
import pytest

from fluscore.corpus import FeatureMatrix, PhoneAlignment, PhoneInventory, write_feature_matrix
from fluscore.errors import ValidationError
from fluscore.scorer import (
    AsrBasedScorerConfig,
    AsrFreeScorerConfig,
    Prediction,
    asrbased_forward,
    asrfree_forward,
    batch_forward,
    collate,
    compute_duration_stats,
    config_from_dict,
    config_to_dict,
    init_params,
    predict_batch,
    prepare_utterance,
)


def _sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def oracle_preprocess(x, p, eps=1e-5):
    h = x @ p["pre.w"] + p["pre.b"]
    mu = h.mean(axis=1, keepdims=True)
    var = h.var(axis=1, keepdims=True)
    return np.tanh((h - mu) / np.sqrt(var + eps) * p["pre.ln_gamma"] + p["pre.ln_beta"])


def oracle_lstm(x, w_x, w_h, b):
    hidden = w_h.shape[0]
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    out = np.zeros((len(x), hidden))
    for t in range(len(x)):
        pre = x[t] @ w_x + h @ w_h + b
        i = _sig(pre[:hidden])
        f = _sig(pre[hidden:2 * hidden])
        g = np.tanh(pre[2 * hidden:3 * hidden])
        o = _sig(pre[3 * hidden:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return out

def oracle_blstm_stack(x, p, n_layers):
    for layer in range(n_layers):
        fwd = oracle_lstm(x, p[f"blstm.{layer}.fwd.w_x"], p[f"blstm.{layer}.fwd.w_h"],
                          p[f"blstm.{layer}.fwd.b"])
        bwd = oracle_lstm(x[::-1], p[f"blstm.{layer}.bwd.w_x"], p[f"blstm.{layer}.bwd.w_h"],
                          p[f"blstm.{layer}.bwd.b"])[::-1]
        x = np.concatenate([fwd, bwd], axis=1)
    return x


def oracle_head(pooled, p):
    return float(np.tanh(pooled @ p["head.w"] + p["head.b"])[0])


def oracle_asrfree(feats, clusters, p, cfg):
    h = oracle_preprocess(feats, p)
    z = np.concatenate([h, p["emb.cluster"][clusters]], axis=1)
    out = oracle_blstm_stack(z, p, cfg.blstm_layers)
    return oracle_head(out.mean(axis=0), p)


def oracle_asrbased(feats, durations, phone_idx, p, cfg):
    h = oracle_preprocess(feats, p)
    z_dur = (durations - cfg.duration_mean) / cfg.duration_std
    z = np.concatenate([p["emb.phone"][phone_idx] + h, z_dur[:, None]], axis=1)
    out = oracle_blstm_stack(z, p, cfg.blstm_layers)
    return oracle_head(out.mean(axis=0), p)


def param_arrays(params):
    return {name: t.data for name, t in params.items()}


def test_asrfree_forward_matches_straight_line_oracle():
    cfg = AsrFreeScorerConfig(feature_dim=8, hidden_dim=4, cluster_count=3,
                              cluster_embed_dim=2, blstm_layers=2)
    params = init_params(cfg, seed=11)
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((4, 8)).astype(np.float32)
    clusters = rng.integers(0, 3, size=4)
    got = asrfree_forward(FeatureMatrix(feats), clusters, params, cfg, "u").score_norm
    want = oracle_asrfree(feats.astype(np.float64), clusters, param_arrays(params), cfg)
    assert abs(got - want) < 1e-12


def test_asrbased_forward_matches_straight_line_oracle():
    cfg = AsrBasedScorerConfig(feature_dim=5, phone_inventory_size=3, hidden_dim=4,
                               blstm_layers=2, duration_mean=0.1, duration_std=0.05)
    params = init_params(cfg, seed=13)
    rng = np.random.default_rng(1)
    feats = rng.standard_normal((3, 5))
    durations = np.array([0.04, 0.12, 0.2])
    inventory = PhoneInventory(["sil", "AA", "B"])
    labels = ["AA", "sil", "B"]
    got = asrbased_forward(feats, durations, labels, inventory, params, cfg, "u").score_norm
    idx = np.array([inventory.index(x) for x in labels])
    want = oracle_asrbased(feats, durations, idx, param_arrays(params), cfg)
    assert abs(got - want) < 1e-12


def test_zero_head_makes_score_input_independent():
    cfg = AsrFreeScorerConfig(feature_dim=4, hidden_dim=3, cluster_count=2,
                              cluster_embed_dim=2, blstm_layers=1)
    params = init_params(cfg, seed=0)
    params["head.w"].data[:] = 0.0
    params["head.b"].data[:] = 0.3
    rng = np.random.default_rng(2)
    for _ in range(3):
        t = int(rng.integers(1, 9))
        m = FeatureMatrix(rng.standard_normal((t, 4)).astype(np.float32))
        pred = asrfree_forward(m, rng.integers(0, 2, size=t), params, cfg)
        assert abs(pred.score_norm - np.tanh(0.3)) < 1e-15


def test_scores_stay_inside_open_interval():
    cfg = AsrFreeScorerConfig(feature_dim=4, hidden_dim=3, cluster_count=2,
                              cluster_embed_dim=2, blstm_layers=2)
    params = init_params(cfg, seed=5)
    rng = np.random.default_rng(3)
    for _ in range(10):
        t = int(rng.integers(1, 20))
        m = FeatureMatrix((rng.standard_normal((t, 4)) * 100).astype(np.float32))
        pred = asrfree_forward(m, rng.integers(0, 2, size=t), params, cfg)
        assert -1.0 < pred.score_norm < 1.0
        assert 0.0 < pred.score_denorm < 4.0
        assert pred.score_denorm == 2.0 * (pred.score_norm + 1.0)


def test_batching_matches_unbatched_forwards():
    cfg = AsrFreeScorerConfig(feature_dim=6, hidden_dim=4, cluster_count=5,
                              cluster_embed_dim=3, blstm_layers=2)
    params = init_params(cfg, seed=21)
    rng = np.random.default_rng(4)
    lengths = [2, 5, 9]
    items = []
    for n, length in enumerate(lengths):
        items.append({
            "id": f"u{n}",
            "features": rng.standard_normal((length, 6)),
            "clusters": rng.integers(0, 5, size=length),
            "length": length,
        })
    batched = batch_forward(params, cfg, collate(items))
    for item, got in zip(items, batched.data):
        single = asrfree_forward(
            FeatureMatrix(item["features"].astype(np.float32)), item["clusters"], params, cfg)
        # float32 storage in FeatureMatrix vs float64 here: compare via the
        # same dtype path instead.
        alone = batch_forward(params, cfg, collate([item]))
        assert abs(got - alone.data[0]) < 1e-10
        assert abs(single.score_norm - alone.data[0]) < 1e-5


def test_batch_permutation_permutes_outputs():
    cfg = AsrFreeScorerConfig(feature_dim=3, hidden_dim=3, cluster_count=4,
                              cluster_embed_dim=2, blstm_layers=2)
    params = init_params(cfg, seed=8)
    rng = np.random.default_rng(5)
    items = []
    for n in range(4):
        length = int(rng.integers(2, 8))
        items.append({"id": f"u{n}", "features": rng.standard_normal((length, 3)),
                      "clusters": rng.integers(0, 4, size=length), "length": length})
    fwd = batch_forward(params, cfg, collate(items)).data
    perm = [2, 0, 3, 1]
    out = batch_forward(params, cfg, collate([items[i] for i in perm])).data
    assert np.array_equal(out, fwd[perm])


def test_different_cluster_sequences_change_score():
    cfg = AsrFreeScorerConfig(feature_dim=4, hidden_dim=3, cluster_count=2,
                              cluster_embed_dim=2, blstm_layers=1)
    params = init_params(cfg, seed=3)
    feats = FeatureMatrix(np.random.default_rng(6).standard_normal((5, 4)).astype(np.float32))
    a = asrfree_forward(feats, np.zeros(5, dtype=int), params, cfg).score_norm
    b = asrfree_forward(feats, np.ones(5, dtype=int), params, cfg).score_norm
    assert a != b


def test_asrbased_degenerate_all_sil_zero_durations():
    cfg = AsrBasedScorerConfig(feature_dim=3, phone_inventory_size=1, hidden_dim=3,
                               blstm_layers=2)
    params = init_params(cfg, seed=4)
    inventory = PhoneInventory(["sil"])
    pred = asrbased_forward(np.zeros((4, 3)), np.zeros(4), ["sil"] * 4, inventory,
                            params, cfg)
    assert np.isfinite(pred.score_norm) and -1 < pred.score_norm < 1
    single = asrbased_forward(np.zeros((1, 3)), np.zeros(1), ["sil"], inventory, params, cfg)
    assert np.isfinite(single.score_norm)


def test_init_params_deterministic_and_documented_shapes():
    cfg = AsrFreeScorerConfig(feature_dim=7, hidden_dim=4, cluster_count=9,
                              cluster_embed_dim=3, blstm_layers=2)
    a = init_params(cfg, seed=42)
    b = init_params(cfg, seed=42)
    c = init_params(cfg, seed=43)
    for name, t in a.items():
        assert np.array_equal(t.data, b[name].data)
    assert any(not np.array_equal(t.data, c[name].data) for name, t in a.items())
    assert a["pre.w"].data.shape == (7, 4)
    assert a["emb.cluster"].data.shape == (9, 3)
    assert a["blstm.0.fwd.w_x"].data.shape == (4 + 3, 16)
    assert a["blstm.1.fwd.w_x"].data.shape == (8, 16)
    assert a["head.w"].data.shape == (8, 1)
    # Forget-gate bias starts at +1, everything else at 0.
    bias = a["blstm.0.fwd.b"].data
    assert np.all(bias[4:8] == 1.0) and np.all(bias[:4] == 0.0) and np.all(bias[8:] == 0.0)


def test_config_dict_roundtrip_and_validation():
    free = AsrFreeScorerConfig(feature_dim=16, cluster_count=9)
    assert config_from_dict(config_to_dict(free)) == free
    based = AsrBasedScorerConfig(feature_dim=16, phone_inventory_size=9,
                                 duration_mean=0.4, duration_std=0.2)
    assert config_from_dict(config_to_dict(based)) == based
    with pytest.raises(ValidationError, match="variant"):
        config_from_dict({"feature_dim": 4})
    with pytest.raises(ValidationError, match="positive"):
        AsrFreeScorerConfig(feature_dim=0)
    with pytest.raises(ValidationError, match="duration_std"):
        AsrBasedScorerConfig(feature_dim=4, phone_inventory_size=2, duration_std=0.0)


def test_predict_batch_roundtrip_from_disk(tmp_path):
    from fluscore.codebook import Codebook

    cfg = AsrFreeScorerConfig(feature_dim=2, hidden_dim=3, cluster_count=2,
                              cluster_embed_dim=2, blstm_layers=1)
    params = init_params(cfg, seed=1)
    cb = Codebook(k=2, dim=2, centroids=np.array([[0.0, 0.0], [10.0, 10.0]]), seed=0)
    rng = np.random.default_rng(7)

    from fluscore.corpus import UtteranceRecord

    records = []
    for n in range(5):
        length = int(rng.integers(1, 7))
        m = FeatureMatrix(rng.standard_normal((length, 2)).astype(np.float32))
        path = tmp_path / f"u{n}.fmx"
        write_feature_matrix(m, path)
        records.append(UtteranceRecord(id=f"u{n}", score_raw=2.0, split="test",
                                       feature_path=path))
    preds = predict_batch(records, params, cfg, batch_size=2, codebook=cb)
    assert [p.utterance_id for p in preds] == [r.id for r in records]
    again = predict_batch(records, params, cfg, batch_size=5, codebook=cb)
    for x, y in zip(preds, again):
        assert abs(x.score_norm - y.score_norm) < 1e-10
    assert predict_batch([], params, cfg, codebook=cb) == []


def test_prepare_utterance_validations(tmp_path):
    from fluscore.corpus import UtteranceRecord

    cfg = AsrFreeScorerConfig(feature_dim=2, hidden_dim=3, cluster_count=2,
                              cluster_embed_dim=2, blstm_layers=1)
    m = FeatureMatrix(np.zeros((3, 2), dtype=np.float32))
    path = tmp_path / "u.fmx"
    write_feature_matrix(m, path)
    record = UtteranceRecord(id="u", score_raw=1.0, split="train", feature_path=path)
    with pytest.raises(ValidationError, match="codebook or precomputed"):
        prepare_utterance(record, cfg)
    with pytest.raises(ValidationError, match="no cluster sequence"):
        prepare_utterance(record, cfg, cluster_sequences={})
    with pytest.raises(ValidationError, match="length"):
        prepare_utterance(record, cfg, cluster_sequences={"u": np.array([0, 1])})
    based = AsrBasedScorerConfig(feature_dim=2, phone_inventory_size=2)
    with pytest.raises(ValidationError, match="alignments"):
        prepare_utterance(record, based)
    inv = PhoneInventory(["sil", "AA"])
    item = prepare_utterance(record, based, alignments={"u": PhoneAlignment([("AA", 0, 3)])},
                             inventory=inv, frame_period=0.01)
    assert item["length"] == 1
    assert np.allclose(item["durations"], [0.03])


def test_duration_stats():
    mean, std = compute_duration_stats([np.array([0.1, 0.3]), np.array([0.2])])
    assert abs(mean - 0.2) < 1e-15
    assert abs(std - np.sqrt(1 / 150)) < 1e-12
    mean, std = compute_duration_stats(np.array([0.5, 0.5]))
    assert std == 1.0  # degenerate spread falls back to identity scaling
    with pytest.raises(ValidationError):
        compute_duration_stats(np.zeros(0))


def test_prediction_invariant():
    p = Prediction.from_norm("u", 0.25)
    assert p.score_denorm == 2.0 * (0.25 + 1.0)
