"""Minimal differentiable numerical core on top of numpy."""

from .gradcheck import GradCheckReport, grad_check, rel_error
from .layers import (
    AttentionParams,
    LSTMParams,
    add,
    bahdanau_attention,
    bilstm,
    concat,
    conv2d,
    conv2d_shared,
    dense,
    fuse,
    gather,
    maxpool,
    mul,
    pool_padding,
    relu,
    reshape,
    scale,
    scatter,
    sigmoid,
    softmax,
    stack,
    take,
    tanh,
    total,
    lstm_step,
    lstm_zero_state,
)
from .losses import bce, ce
from .optim import adam_step
from .tensor import NonFiniteError, Param, Tensor, backward, record_kinks, retain_grad

__all__ = [
    "AttentionParams",
    "GradCheckReport",
    "LSTMParams",
    "NonFiniteError",
    "Param",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "bahdanau_attention",
    "bce",
    "bilstm",
    "ce",
    "concat",
    "conv2d",
    "conv2d_shared",
    "dense",
    "fuse",
    "gather",
    "grad_check",
    "lstm_step",
    "lstm_zero_state",
    "maxpool",
    "mul",
    "pool_padding",
    "record_kinks",
    "rel_error",
    "retain_grad",
    "relu",
    "reshape",
    "scale",
    "scatter",
    "sigmoid",
    "softmax",
    "stack",
    "take",
    "tanh",
    "total",
]
