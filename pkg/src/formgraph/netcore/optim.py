from __future__ import annotations

import numpy as np

from .tensor import Param


def adam_step(params: list[Param], lr: float, t: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update in place, then zero the gradients."""
    if t < 1:
        raise ValueError(f"adam step counter must be >= 1, got {t}")
    c1 = 1 - beta1**t
    c2 = 1 - beta2**t
    for p in params:
        g = p.grad
        p.adam_m *= beta1
        p.adam_m += (1 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1 - beta2) * g * g
        step = lr * (p.adam_m / c1) / (np.sqrt(p.adam_v / c2) + eps)
        p.data -= step.astype(p.data.dtype)
        p.zero_grad()
