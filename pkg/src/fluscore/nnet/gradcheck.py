"""Finite-difference gradient verification for every layer and both scorers.

central_diff perturbs each entry of each input array by +-h and rebuilds the
loss from scratch, so it is independent of the tape. Relative error uses a
floor of 1 in the denominator to keep near-zero gradients comparable.
"""

from __future__ import annotations

import zlib

import numpy as np

from . import autograd as ag
from . import layers
from .autograd import Tensor

FD_STEP = 1e-3
REL_TOL = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_function(build_loss, tensors: dict[str, Tensor], h: float = FD_STEP) -> dict[str, float]:
    """Compare tape gradients of build_loss() against central differences.

    build_loss must read the current .data of the given tensors; it is called
    once for the analytic pass and twice per scalar entry for the numeric one.
    Returns max relative error per tensor name.
    """
    for t in tensors.values():
        t.data = np.ascontiguousarray(t.data)  # FD pokes a flat view in place
        t.requires_grad = True
        t.grad = None
    loss = build_loss()
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in tensors.items()}

    errors: dict[str, float] = {}
    with ag.no_grad():
        for name, t in tensors.items():
            numeric = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            num_flat = numeric.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                up = build_loss().item()
                flat[i] = keep - h
                down = build_loss().item()
                flat[i] = keep
                num_flat[i] = (up - down) / (2.0 * h)
            errors[name] = relative_error(analytic[name], numeric)
    return errors


def _rand(rng, *shape):
    return Tensor(rng.uniform(-0.8, 0.8, size=shape))


def _lstm_params(rng, din: int, hidden: int) -> dict[str, Tensor]:
    return {
        "w_x": _rand(rng, din, 4 * hidden),
        "w_h": _rand(rng, hidden, 4 * hidden),
        "b": _rand(rng, 4 * hidden),
    }


def _readout(rng, shape) -> np.ndarray:
    """Fixed random projection turning any output into a scalar loss."""
    return rng.standard_normal(shape)


def _check_linear(rng):
    x, w, b = _rand(rng, 3, 4), _rand(rng, 4, 2), _rand(rng, 2)
    r = _readout(rng, (3, 2))
    return check_function(lambda: ag.reduce_sum(ag.mul(layers.linear_forward(x, w, b), r)),
                          {"x": x, "w": w, "b": b})


def _check_layernorm(rng):
    x, gamma, beta = _rand(rng, 4, 5), _rand(rng, 5), _rand(rng, 5)
    r = _readout(rng, (4, 5))
    return check_function(
        lambda: ag.reduce_sum(ag.mul(layers.layernorm_forward(x, gamma, beta), r)),
        {"x": x, "gamma": gamma, "beta": beta},
    )


def _check_embedding(rng):
    table = _rand(rng, 5, 3)
    idx = rng.integers(0, 5, size=7)
    r = _readout(rng, (7, 3))
    return check_function(lambda: ag.reduce_sum(ag.mul(layers.embedding_lookup(table, idx), r)),
                          {"table": table})


def _check_lstm_cell(rng):
    hidden = 3
    x_t, h0, c0 = _rand(rng, 2, 4), _rand(rng, 2, hidden), _rand(rng, 2, hidden)
    p = _lstm_params(rng, 4, hidden)
    r1, r2 = _readout(rng, (2, hidden)), _readout(rng, (2, hidden))

    def loss():
        h, c = ag.lstm_cell(x_t, h0, c0, p["w_x"], p["w_h"], p["b"])
        return ag.add(ag.reduce_sum(ag.mul(h, r1)), ag.reduce_sum(ag.mul(c, r2)))

    return check_function(loss, {"x_t": x_t, "h0": h0, "c0": c0, **p})


def _check_lstm_sequence(rng):
    hidden = 3
    x = _rand(rng, 5, 4)
    p = _lstm_params(rng, 4, hidden)
    r = _readout(rng, (5, hidden))
    direction = "fwd" if rng.integers(2) else "bwd"
    return check_function(
        lambda: ag.reduce_sum(ag.mul(layers.lstm_forward(x, p, direction), r)),
        {"x": x, **p},
    )


def _check_bilstm_stack(rng):
    hidden = 2
    batch, steps, din = 2, 4, 3
    x = _rand(rng, batch, steps, din)
    lengths = np.array([4, 2])
    mask = (np.arange(steps)[None, :] < lengths[:, None])
    stack = [
        {"fwd": _lstm_params(rng, din, hidden), "bwd": _lstm_params(rng, din, hidden)},
        {"fwd": _lstm_params(rng, 2 * hidden, hidden), "bwd": _lstm_params(rng, 2 * hidden, hidden)},
    ]
    tensors = {"x": x}
    for i, layer in enumerate(stack):
        for d in ("fwd", "bwd"):
            for k, t in layer[d].items():
                tensors[f"l{i}.{d}.{k}"] = t
    r = _readout(rng, (batch, 2 * hidden))

    def loss():
        out = layers.bilstm_stack_forward(x, stack, lengths=lengths, mask=mask)
        pooled = layers.masked_mean_pool(out, mask)
        return ag.reduce_sum(ag.mul(pooled, r))

    return check_function(loss, tensors)


def _check_pool(rng):
    x = _rand(rng, 3, 6, 2)
    mask = np.array([[1, 1, 1, 1, 0, 0], [1, 1, 0, 0, 0, 0], [1, 1, 1, 1, 1, 1]], dtype=bool)
    r = _readout(rng, (3, 2))
    return check_function(lambda: ag.reduce_sum(ag.mul(layers.masked_mean_pool(x, mask), r)),
                          {"x": x})


def _check_head(rng):
    x, w, b = _rand(rng, 4, 3), _rand(rng, 3, 1), _rand(rng, 1)
    r = _readout(rng, (4,))
    return check_function(
        lambda: ag.reduce_sum(
            ag.mul(ag.tanh(ag.reshape(layers.linear_forward(x, w, b), (4,))), r)
        ),
        {"x": x, "w": w, "b": b},
    )


def _check_mse(rng):
    pred, target = _rand(rng, 6), _rand(rng, 6)
    return check_function(lambda: layers.mse_loss(pred, target), {"pred": pred, "target": target})


def _check_scorer(rng, variant: str):
    # Imported here: scorer sits above nnet in the package layering.
    from ..scorer import (
        AsrBasedScorerConfig,
        AsrFreeScorerConfig,
        batch_forward,
        init_params,
    )

    if variant == "asr_free":
        cfg = AsrFreeScorerConfig(feature_dim=6, hidden_dim=3, cluster_count=4,
                                  cluster_embed_dim=2, blstm_layers=2)
        params = init_params(cfg, seed=int(rng.integers(1 << 31)))
        lengths = np.array([5, 3])
        feats = rng.standard_normal((2, 5, 6))
        feats[1, 3:] = 0.0
        clusters = rng.integers(0, 4, size=(2, 5))
        inputs = {"features": feats, "clusters": clusters, "lengths": lengths}
    else:
        cfg = AsrBasedScorerConfig(feature_dim=6, hidden_dim=3, phone_inventory_size=4,
                                   blstm_layers=2)
        params = init_params(cfg, seed=int(rng.integers(1 << 31)))
        lengths = np.array([4, 2])
        feats = rng.standard_normal((2, 4, 6))
        feats[1, 2:] = 0.0
        inputs = {
            "features": feats,
            "phones": rng.integers(0, 4, size=(2, 4)),
            "durations": rng.uniform(0.02, 0.3, size=(2, 4)),
            "lengths": lengths,
        }
    target = rng.uniform(-0.8, 0.8, size=2)
    tensors = {name: t for name, t in params.items()}

    def loss():
        pred = batch_forward(params, cfg, inputs)
        return layers.mse_loss(pred, target)

    return check_function(loss, tensors)


STANDARD_CHECKS = {
    "linear": _check_linear,
    "layernorm": _check_layernorm,
    "embedding": _check_embedding,
    "lstm_cell": _check_lstm_cell,
    "lstm_sequence": _check_lstm_sequence,
    "bilstm_stack": _check_bilstm_stack,
    "masked_mean_pool": _check_pool,
    "tanh_head": _check_head,
    "mse": _check_mse,
    "scorer_asr_free": lambda rng: _check_scorer(rng, "asr_free"),
    "scorer_asr_based": lambda rng: _check_scorer(rng, "asr_based"),
}


def run_standard_checks(seeds=range(20), tol: float = REL_TOL):
    """Run every layer/scorer check over the seeds; returns result rows."""
    rows = []
    for name, fn in STANDARD_CHECKS.items():
        worst = 0.0
        for seed in seeds:
            errors = fn(np.random.default_rng([seed, zlib.crc32(name.encode())]))
            worst = max(worst, max(errors.values()))
        rows.append({"check": name, "max_rel_err": worst, "ok": worst < tol})
    return rows
