"""Mean-reduced binary and categorical cross entropy over valid positions."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, make

EPS = 1e-7


def _valid(mask, shape) -> np.ndarray:
    mask = np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("loss over an empty valid set")
    return mask


def bce(p: Tensor, y, mask=None) -> Tensor:
    """-[y ln p + (1-y) ln(1-p)] averaged where ``mask`` is set; p clamped to [EPS, 1-EPS]."""
    y = np.asarray(y, dtype=p.dtype)
    mask = _valid(mask, p.shape)
    count = mask.sum()
    pc = np.clip(p.data, EPS, 1 - EPS)
    terms = -(y * np.log(pc) + (1 - y) * np.log(1 - pc))
    value = np.where(mask, terms, 0).sum() / count
    inside = (p.data >= EPS) & (p.data <= 1 - EPS) & mask

    def bw(g):
        return (np.where(inside, g * (-(y / pc) + (1 - y) / (1 - pc)) / count, 0).astype(p.dtype),)

    return make(np.asarray(value, dtype=p.dtype), (p,), bw, "bce")


def ce(probs: Tensor, target, mask=None) -> Tensor:
    """-ln probs[target] averaged where ``mask`` is set; ``probs`` is (..., K)."""
    target = np.asarray(target, dtype=np.int64)
    mask = _valid(mask, target.shape)
    count = mask.sum()
    picked = np.take_along_axis(probs.data, target[..., None], axis=-1)[..., 0]
    pc = np.clip(picked, EPS, 1.0)
    value = np.where(mask, -np.log(pc), 0).sum() / count
    inside = (picked >= EPS) & mask

    def bw(g):
        full = np.zeros_like(probs.data)
        np.put_along_axis(full, target[..., None], np.where(inside, -g / (pc * count), 0)[..., None], axis=-1)
        return (full,)

    return make(np.asarray(value, dtype=probs.dtype), (probs,), bw, "ce")
