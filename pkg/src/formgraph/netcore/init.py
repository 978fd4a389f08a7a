"""Seeded weight initialisers."""

from __future__ import annotations

import numpy as np

from .layers import AttentionParams, LSTMParams
from .tensor import Param


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def dense_params(rng, name: str, n_in: int, n_out: int, dtype=np.float32) -> tuple[Param, Param]:
    return (
        Param(glorot(rng, (n_in, n_out), n_in, n_out, dtype), f"{name}.w"),
        Param(np.zeros(n_out, dtype=dtype), f"{name}.b"),
    )


def conv_params(rng, name: str, k: int, cin: int, cout: int, dtype=np.float32) -> tuple[Param, Param]:
    return (
        Param(glorot(rng, (k, k, cin, cout), k * k * cin, k * k * cout, dtype), f"{name}.w"),
        Param(np.zeros(cout, dtype=dtype), f"{name}.b"),
    )


def lstm_params(rng, name: str, n_in: int, hidden: int, dtype=np.float32) -> LSTMParams:
    limit = 1.0 / np.sqrt(hidden)
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden:2 * hidden] = 1.0  # forget gate
    return LSTMParams(
        Param(rng.uniform(-limit, limit, (n_in, 4 * hidden)).astype(dtype), f"{name}.wx"),
        Param(rng.uniform(-limit, limit, (hidden, 4 * hidden)).astype(dtype), f"{name}.wh"),
        Param(b, f"{name}.b"),
    )


def attention_params(rng, name: str, state_dim: int, memory_dim: int, size: int, dtype=np.float32) -> AttentionParams:
    return AttentionParams(
        Param(glorot(rng, (state_dim, size), state_dim, size, dtype), f"{name}.w1"),
        Param(glorot(rng, (memory_dim, size), memory_dim, size, dtype), f"{name}.w2"),
        Param(glorot(rng, (size,), size, 1, dtype), f"{name}.v"),
    )
