"""Minimal neural-network kernel: tensors with reverse-mode gradients,
the layers the scorers need, Adam, checkpoints, and a finite-difference
gradient checker."""

from .autograd import Tensor, add, concat_last, embedding, gather_time, grad_enabled, matmul
from .autograd import mul, narrow_last, neg, no_grad, reduce_mean, reduce_sum, reshape, rsqrt
from .autograd import select_time, sigmoid, stack_time, sub, tanh, tensor
from .layers import (
    bilstm_stack_forward,
    embedding_lookup,
    layernorm_forward,
    linear_forward,
    lstm_forward,
    masked_mean_pool,
    mse_loss,
)
from .optim import AdamState, ParamSet, adam_step, init_adam
from .checkpoint import (
    read_adam_state,
    read_checkpoint,
    write_adam_state,
    write_checkpoint,
)

__all__ = [
    "Tensor", "tensor", "no_grad", "grad_enabled",
    "add", "sub", "mul", "neg", "matmul", "tanh", "sigmoid", "rsqrt",
    "reduce_sum", "reduce_mean", "reshape", "concat_last", "narrow_last",
    "select_time", "stack_time", "gather_time", "embedding",
    "linear_forward", "layernorm_forward", "embedding_lookup",
    "lstm_forward", "bilstm_stack_forward", "masked_mean_pool", "mse_loss",
    "ParamSet", "AdamState", "init_adam", "adam_step",
    "write_checkpoint", "read_checkpoint", "write_adam_state", "read_adam_state",
]
