"""Tape-based reverse-mode autodiff over float64 numpy arrays.

Every op returns a new Tensor holding its inputs as parents and a closure
that scatters the output gradient back into the parents' grad buffers.
backward() walks the tape once in reverse topological order. Gradients
accumulate in place, so call zero_grad between steps.

Only what the scorers need is implemented: 2-D matmul, broadcasting for
elementwise ops, a handful of shape ops, and a fused LSTM cell whose
backward is hand-written (one Python-level node per gate set instead of
a dozen primitive nodes per timestep).
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

_state = threading.local()


def _grad_on() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording; forwards inside run graph-free."""
    prev = _grad_on()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def grad_enabled() -> bool:
    return _grad_on()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.data.shape}")
        if not self._parents:
            raise ValueError("backward called before any forward computation")
        order = _topo_order(self)
        _accum(self, np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS; recursion would overflow on long sequences."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, child = stack[-1]
        if child == 0 and id(node) in visited:
            stack.pop()
            continue
        visited.add(id(node))
        if child < len(node._parents):
            stack[-1] = (node, child + 1)
            nxt = node._parents[child]
            if id(nxt) not in visited:
                stack.append((nxt, 0))
        else:
            stack.pop()
            order.append(node)
    return order


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if _grad_on() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), backward)


def neg(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            _accum(a, -g)

    return _make(-a.data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


def tanh(a) -> Tensor:
    a = _wrap(a)
    y = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * (1.0 - y * y))

    return _make(y, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    # tanh form avoids overflow for large negative inputs.
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def backward(g):
        if a.requires_grad:
            _accum(a, g * y * (1.0 - y))

    return _make(y, (a,), backward)


def rsqrt(a) -> Tensor:
    a = _wrap(a)
    y = 1.0 / np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * (-0.5) * y * y * y)

    return _make(y, (a,), backward)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    s = reduce_sum(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.data.shape

    def backward(g):
        if a.requires_grad:
            _accum(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def concat_last(parts: list) -> Tensor:
    parts = [_wrap(p) for p in parts]
    widths = [p.data.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                _accum(p, g[..., lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), backward)


def narrow_last(a, start: int, size: int) -> Tensor:
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[..., start:start + size] = g
            _accum(a, full)

    return _make(a.data[..., start:start + size].copy(), (a,), backward)


def select_time(a, t: int) -> Tensor:
    """x[:, t, :] for a (B, T, D) tensor."""
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, t, :] = g
            _accum(a, full)

    return _make(a.data[:, t, :].copy(), (a,), backward)


def stack_time(steps: list) -> Tensor:
    """Stack T tensors of shape (B, D) into (B, T, D)."""
    steps = [_wrap(s) for s in steps]

    def backward(g):
        for t, s in enumerate(steps):
            if s.requires_grad:
                _accum(s, g[:, t, :])

    return _make(np.stack([s.data for s in steps], axis=1), tuple(steps), backward)


def gather_time(a, idx: np.ndarray) -> Tensor:
    """out[b, t] = a[b, idx[b, t]] over the time axis of a (B, T, D) tensor."""
    a = _wrap(a)
    idx = np.asarray(idx)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, (np.arange(idx.shape[0])[:, None], idx), g)
            _accum(a, full)

    return _make(np.take_along_axis(a.data, idx[:, :, None], axis=1), (a,), backward)


def embedding(table, idx: np.ndarray) -> Tensor:
    """Row lookup table[idx]; gradient scatters back with duplicate handling."""
    table = _wrap(table)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ValueError(
            f"embedding index out of range [0, {table.data.shape[0]}): "
            f"min {idx.min()}, max {idx.max()}"
        )

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, idx.reshape(-1), g.reshape(-1, table.data.shape[1]))
            _accum(table, full)

    data = table.data[idx] if idx.size else np.zeros(idx.shape + (table.data.shape[1],))
    return _make(data, (table,), backward)


def lstm_cell(x_t, h_prev, c_prev, w_x, w_h, b):
    """One LSTM step for a (B, Din) slice; gate layout [i, f, g, o].

    Returns (h, c). The backward is fused by hand: the c node owns the
    i/f/g gate gradients, the h node owns the o gate and routes its cell
    contribution through c (its parent), so topological order guarantees
    c's gradient is complete before the gate math runs.
    """
    hidden = w_h.data.shape[0]
    pre = x_t.data @ w_x.data + h_prev.data @ w_h.data + b.data
    ifo = 0.5 * (1.0 + np.tanh(0.5 * pre[:, np.r_[0:hidden, hidden:2 * hidden, 3 * hidden:4 * hidden]]))
    gate_i = ifo[:, :hidden]
    gate_f = ifo[:, hidden:2 * hidden]
    gate_o = ifo[:, 2 * hidden:]
    cand = np.tanh(pre[:, 2 * hidden:3 * hidden])
    c_new = gate_f * c_prev.data + gate_i * cand
    tanh_c = np.tanh(c_new)
    h_new = gate_o * tanh_c

    def backward_c(gc):
        gi = gc * cand * gate_i * (1.0 - gate_i)
        gf = gc * c_prev.data * gate_f * (1.0 - gate_f)
        gg = gc * gate_i * (1.0 - cand * cand)
        pre_g = np.concatenate([gi, gf, gg], axis=1)
        if x_t.requires_grad:
            _accum(x_t, pre_g @ w_x.data[:, :3 * hidden].T)
        if h_prev.requires_grad:
            _accum(h_prev, pre_g @ w_h.data[:, :3 * hidden].T)
        if w_x.requires_grad:
            if w_x.grad is None:
                w_x.grad = np.zeros_like(w_x.data)
            w_x.grad[:, :3 * hidden] += x_t.data.T @ pre_g
        if w_h.requires_grad:
            if w_h.grad is None:
                w_h.grad = np.zeros_like(w_h.data)
            w_h.grad[:, :3 * hidden] += h_prev.data.T @ pre_g
        if b.requires_grad:
            if b.grad is None:
                b.grad = np.zeros_like(b.data)
            b.grad[:3 * hidden] += pre_g.sum(axis=0)
        if c_prev.requires_grad:
            _accum(c_prev, gc * gate_f)

    c_out = _make(c_new, (x_t, h_prev, c_prev, w_x, w_h, b), backward_c)

    def backward_h(gh):
        go = gh * tanh_c * gate_o * (1.0 - gate_o)
        if x_t.requires_grad:
            _accum(x_t, go @ w_x.data[:, 3 * hidden:].T)
        if h_prev.requires_grad:
            _accum(h_prev, go @ w_h.data[:, 3 * hidden:].T)
        if w_x.requires_grad:
            if w_x.grad is None:
                w_x.grad = np.zeros_like(w_x.data)
            w_x.grad[:, 3 * hidden:] += x_t.data.T @ go
        if w_h.requires_grad:
            if w_h.grad is None:
                w_h.grad = np.zeros_like(w_h.data)
            w_h.grad[:, 3 * hidden:] += h_prev.data.T @ go
        if b.requires_grad:
            if b.grad is None:
                b.grad = np.zeros_like(b.data)
            b.grad[3 * hidden:] += go.sum(axis=0)
        if c_out.requires_grad:
            _accum(c_out, gh * gate_o * (1.0 - tanh_c * tanh_c))

    h_out = _make(h_new, (c_out, x_t, h_prev, w_x, w_h, b), backward_h)
    return h_out, c_out
