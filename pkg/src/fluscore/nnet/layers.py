"""Layers composed from autograd primitives: dense, LayerNorm, embeddings,
(bi)LSTM over padded batches, masked pooling, MSE."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor

LN_EPS = 1e-5


def linear_forward(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """out = x W + b with b broadcast over rows; x may be (M, Din) or (B, T, Din)."""
    if x.data.ndim == 3:
        batch, steps, din = x.data.shape
        flat = ag.reshape(x, (batch * steps, din))
        out = ag.add(ag.matmul(flat, w), b)
        return ag.reshape(out, (batch, steps, w.data.shape[1]))
    return ag.add(ag.matmul(x, w), b)


def layernorm_forward(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """Per-row normalization with population variance, then scale and shift."""
    if x.data.shape[-1] != gamma.data.shape[0] or gamma.data.shape != beta.data.shape:
        raise ValueError(
            f"layernorm shape mismatch: x {x.data.shape}, gamma {gamma.data.shape}, "
            f"beta {beta.data.shape}"
        )
    last = x.data.ndim - 1
    mu = ag.reduce_mean(x, axis=last, keepdims=True)
    centered = ag.sub(x, mu)
    var = ag.reduce_mean(ag.mul(centered, centered), axis=last, keepdims=True)
    inv = ag.rsqrt(ag.add(var, eps))
    return ag.add(ag.mul(ag.mul(centered, inv), gamma), beta)


def embedding_lookup(table: Tensor, indexes) -> Tensor:
    return ag.embedding(table, np.asarray(indexes, dtype=np.int64))


def _zero_state(batch: int, hidden: int) -> Tensor:
    return Tensor(np.zeros((batch, hidden)))


def _reversal_index(lengths: np.ndarray, steps: int) -> np.ndarray:
    """Per-row time reversal of the first lengths[b] positions; pads stay put.

    The map is an involution, so the same index matrix un-reverses.
    """
    ar = np.arange(steps)[None, :]
    lens = lengths[:, None]
    return np.where(ar < lens, lens - 1 - ar, ar)


def lstm_forward(x: Tensor, params: dict, direction: str = "fwd", lengths=None) -> Tensor:
    """Run an LSTM over time; returns hidden states aligned with the input.

    x is (T, Din) or (B, T, Din). For "bwd", each row is reversed over its
    own real length (per `lengths`) before the recurrence and un-reversed
    after, so padding never feeds the recurrence of real frames.
    """
    if direction not in ("fwd", "bwd"):
        raise ValueError(f"direction must be 'fwd' or 'bwd', got {direction!r}")
    squeeze = x.data.ndim == 2
    if squeeze:
        x = ag.reshape(x, (1,) + x.data.shape)
    batch, steps, din = x.data.shape
    w_x, w_h, b = params["w_x"], params["w_h"], params["b"]
    if w_x.data.shape[0] != din:
        raise ValueError(f"lstm input dim {din} != weight rows {w_x.data.shape[0]}")
    hidden = w_h.data.shape[0]
    if lengths is None:
        lengths = np.full(batch, steps, dtype=np.int64)
    else:
        lengths = np.asarray(lengths, dtype=np.int64)

    if direction == "bwd":
        ridx = _reversal_index(lengths, steps)
        x = ag.gather_time(x, ridx)

    h = _zero_state(batch, hidden)
    c = _zero_state(batch, hidden)
    outputs = []
    for t in range(steps):
        x_t = ag.select_time(x, t)
        h, c = ag.lstm_cell(x_t, h, c, w_x, w_h, b)
        outputs.append(h)
    out = ag.stack_time(outputs)

    if direction == "bwd":
        out = ag.gather_time(out, ridx)
    if squeeze:
        out = ag.reshape(out, out.data.shape[1:])
    return out


def bilstm_stack_forward(x: Tensor, layer_params: list, lengths=None,
                         mask: np.ndarray | None = None) -> Tensor:
    """Stack of bidirectional layers; each concatenates fwd and bwd streams.

    mask (B, T) of {0,1} zeroes pad positions between layers so upper layers
    never see garbage hidden states on pads.
    """
    out = x
    for params in layer_params:
        fwd = lstm_forward(out, params["fwd"], "fwd", lengths=lengths)
        bwd = lstm_forward(out, params["bwd"], "bwd", lengths=lengths)
        out = ag.concat_last([fwd, bwd])
        if mask is not None:
            out = ag.mul(out, Tensor(mask[:, :, None].astype(np.float64)))
    return out


def masked_mean_pool(h: Tensor, mask) -> Tensor:
    """Mean over time of rows where mask is true; (T, D)->(D,) or (B, T, D)->(B, D)."""
    mask = np.asarray(mask, dtype=bool)
    if h.data.ndim == 2:
        if mask.shape != (h.data.shape[0],):
            raise ValueError(f"mask shape {mask.shape} != time dim {h.data.shape[0]}")
        if not mask.any():
            raise ValueError("masked_mean_pool: mask selects no rows")
        weights = mask.astype(np.float64)[:, None] / mask.sum()
        return ag.reduce_sum(ag.mul(h, Tensor(weights)), axis=0)
    if mask.shape != h.data.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} != batch/time dims {h.data.shape[:2]}")
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        raise ValueError("masked_mean_pool: some rows select no frames")
    weights = mask.astype(np.float64) / counts[:, None]
    return ag.reduce_sum(ag.mul(h, Tensor(weights[:, :, None])), axis=1)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.data.shape != target.data.shape:
        raise ValueError(f"mse shapes differ: {pred.data.shape} vs {target.data.shape}")
    if pred.data.size < 1:
        raise ValueError("mse over empty vectors")
    diff = ag.sub(pred, target)
    return ag.reduce_mean(ag.mul(diff, diff))
