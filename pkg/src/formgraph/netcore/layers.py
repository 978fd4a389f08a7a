"""Differentiable operations used by the association network.

Layouts are channels-last: images are ``(N, H, W, C)`` and conv filters are
``(k, k, C_in, C_out)``.  Convolution is cross-correlation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Param, Tensor, as_tensor, log_kink, make, recording_kinks


# ---------------------------------------------------------------------------
# elementwise and shape plumbing
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(x: Tensor, factor) -> Tensor:
    """Multiply by a constant array or scalar (broadcast onto ``x``)."""
    factor = np.asarray(factor, dtype=x.dtype)
    return make(x.data * factor, (x,), lambda g: (np.broadcast_to(g * factor, x.shape),), "scale")


def reshape(x: Tensor, shape) -> Tensor:
    return make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(xs, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make(np.concatenate([x.data for x in xs], axis=axis), xs, bw, "concat")


def stack(xs, axis: int = 1) -> Tensor:
    xs = [as_tensor(x) for x in xs]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make(np.stack([x.data for x in xs], axis=axis), xs, bw, "stack")


def take(x: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing, e.g. ``take(seq, (slice(None), t))``."""

    def bw(g):
        full = np.zeros_like(x.data)
        full[key] = g
        return (full,)

    return make(x.data[key], (x,), bw, "take")


def gather(x: Tensor, index: np.ndarray) -> Tensor:
    """Rows of ``x`` along axis 0; repeated indices accumulate gradient."""
    index = np.asarray(index)

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return make(x.data[index], (x,), bw, "gather")


def scatter(x: Tensor, index: np.ndarray, rows: int) -> Tensor:
    """Place rows of ``x`` at ``index`` inside a zero array with ``rows`` rows."""
    index = np.asarray(index)
    out = np.zeros((rows,) + x.shape[1:], dtype=x.dtype)
    out[index] = x.data
    return make(out, (x,), lambda g: (g[index],), "scatter")


def total(x: Tensor) -> Tensor:
    return make(np.sum(x.data), (x,), lambda g: (np.full_like(x.data, g),), "sum")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    if recording_kinks():
        log_kink(on)
    return make(np.where(on, x.data, 0).astype(x.dtype), (x,), lambda g: (g * on,), "relu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return make(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return make(t, (x,), lambda g: (g * (1 - t * t),), "tanh")


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    s = _softmax(x.data)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make(s, (x,), bw, "softmax")


# ---------------------------------------------------------------------------
# dense, convolution, pooling
# ---------------------------------------------------------------------------


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.shape[-1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ValueError(f"dense shape mismatch: {x.shape} @ {w.shape} + {b.shape}")
    n, m = w.shape

    def bw(g):
        g2 = g.reshape(-1, m)
        dx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        dw = x.data.reshape(-1, n).T @ g2 if w.requires_grad else None
        return dx, dw, g2.sum(axis=0)

    return make(x.data @ w.data + b.data, (x, w, b), bw, "dense")


def _check_filters(w: Tensor, cin: int) -> int:
    k, k2, wcin, _ = w.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d needs an odd square kernel, got {k}x{k2}")
    if wcin != cin:
        raise ValueError(f"conv2d channel mismatch: input has {cin}, filters expect {wcin}")
    return k


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))


def _corr(xp: np.ndarray, w: np.ndarray, h: int, wd: int) -> np.ndarray:
    # sum of one small matmul per kernel offset; avoids a k*k-times larger im2col copy
    k = w.shape[0]
    out = np.zeros(xp.shape[:1] + (h, wd, w.shape[-1]), dtype=np.result_type(xp, w))
    for i in range(k):
        for j in range(k):
            out += xp[:, i:i + h, j:j + wd, :] @ w[i, j]
    return out


def _corr_filter_grad(xp: np.ndarray, g: np.ndarray, k: int) -> np.ndarray:
    _, h, wd, cout = g.shape
    g2 = g.reshape(-1, cout)
    cin = xp.shape[-1]
    dw = np.empty((k, k, cin, cout), dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            dw[i, j] = xp[:, i:i + h, j:j + wd, :].reshape(-1, cin).T @ g2
    return dw


def _corr_input_grad(g: np.ndarray, w: np.ndarray, padded_shape, p: int) -> np.ndarray:
    _, h, wd, _ = g.shape
    k = w.shape[0]
    dxp = np.zeros(padded_shape, dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + h, j:j + wd, :] += g @ w[i, j].T
    return dxp[:, p:p + h, p:p + wd, :]


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-1, same-padded 2-D cross-correlation on ``(N, H, W, C)``."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    k = _check_filters(w, x.shape[-1])
    n, h, wd, _ = x.shape
    p = k // 2
    xp = _pad(x.data, p)
    out = _corr(xp, w.data, h, wd) + b.data

    def bw(g):
        dw = _corr_filter_grad(xp, g, k) if w.requires_grad else None
        dx = _corr_input_grad(g, w.data, xp.shape, p) if x.requires_grad else None
        return dx, dw, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return make(out, (x, w, b), bw, "conv2d")


def conv2d_shared(x: Tensor, shared: np.ndarray, w: Tensor, b: Tensor) -> Tensor:
    """``conv2d`` over ``x`` with the constant ``(H, W, C_s)`` map appended to every sample.

    The shared channels are convolved once instead of once per sample.  The
    result equals ``conv2d(concat([x, broadcast(shared)]), w, b)``.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    n, h, wd, cx = x.shape
    k = _check_filters(w, cx + shared.shape[-1])
    p = k // 2
    xp = _pad(x.data, p)
    sp = _pad(np.asarray(shared, dtype=x.dtype)[None], p)
    wx, ws = w.data[:, :, :cx], w.data[:, :, cx:]
    out = _corr(xp, wx, h, wd) + (_corr(sp, ws, h, wd) + b.data)

    def bw(g):
        dw = None
        if w.requires_grad:
            dw = np.concatenate([_corr_filter_grad(xp, g, k), _corr_filter_grad(sp, g.sum(axis=0, keepdims=True), k)], axis=2)
        dx = _corr_input_grad(g, wx, xp.shape, p) if x.requires_grad else None
        return dx, dw, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return make(out, (x, w, b), bw, "conv2d")


def pool_padding(size: int, kernel: int = 3, stride: int = 2) -> tuple[int, int, int]:
    """Output size and (before, after) padding of a same-padded pooling."""
    out = -(-size // stride)
    pad = max((out - 1) * stride + kernel - size, 0)
    return out, pad // 2, pad - pad // 2


def maxpool(x: Tensor, kernel: int = 3, stride: int = 2) -> Tensor:
    """Same-padded max pooling; out-of-range cells count as -inf."""
    n, h, wd, c = x.shape
    ho, top, bottom = pool_padding(h, kernel, stride)
    wo, left, right = pool_padding(wd, kernel, stride)
    xp = np.pad(x.data, ((0, 0), (top, bottom), (left, right), (0, 0)), constant_values=-np.inf)
    def view(idx):
        i, j = divmod(idx, kernel)
        return (slice(None), slice(i, i + stride * (ho - 1) + 1, stride), slice(j, j + stride * (wo - 1) + 1, stride))

    out = xp[view(0)].copy()
    for idx in range(1, kernel * kernel):
        np.maximum(out, xp[view(idx)], out=out)
    if recording_kinks():
        arg = np.zeros(out.shape, dtype=np.uint8)
        for idx in reversed(range(kernel * kernel)):
            arg[xp[view(idx)] == out] = idx
        log_kink(arg)

    def bw(g):
        # each output routes its gradient to the first window cell holding the max
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        claimed = np.zeros(out.shape, dtype=bool)
        for idx in range(kernel * kernel):
            hit = (xp[view(idx)] == out) & ~claimed
            claimed |= hit
            dxp[view(idx)] += np.where(hit, g, 0)
        return (dxp[:, top:top + h, left:left + wd, :],)

    return make(out, (x,), bw, "maxpool")


def fuse(feature: Tensor, kernel: Tensor) -> Tensor:
    """1x1 convolution of ``(N, h, w, C)`` maps with per-sample ``(N, C)`` filters, flattened."""
    f, k = feature.data, kernel.data
    n, h, wd, c = f.shape
    out = np.einsum("nhwc,nc->nhw", f, k).reshape(n, h * wd)

    def bw(g):
        g3 = g.reshape(n, h, wd)
        return g3[..., None] * k[:, None, None, :], np.einsum("nhw,nhwc->nc", g3, f)

    return make(out, (feature, kernel), bw, "fuse")


# ---------------------------------------------------------------------------
# recurrent cells and attention
# ---------------------------------------------------------------------------


@dataclass
class LSTMParams:
    wx: Param
    wh: Param
    b: Param

    @property
    def hidden(self) -> int:
        return self.wh.shape[0]

    def params(self) -> list[Param]:
        return [self.wx, self.wh, self.b]


def lstm_step(x: Tensor, h: Tensor, c: Tensor, p: LSTMParams, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """One LSTM step with gate order (input, forget, cell, output).

    Rows where ``mask`` is 0 carry ``h`` and ``c`` through unchanged.
    """
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    hid = p.hidden
    if x.shape[-1] != p.wx.shape[0] or h.shape[-1] != hid or p.wx.shape[1] != 4 * hid:
        raise ValueError(f"lstm_step shape mismatch: x {x.shape}, h {h.shape}, wx {p.wx.shape}")
    z = x.data @ p.wx.data + h.data @ p.wh.data + p.b.data
    ig = _sigmoid(z[:, :hid])
    fg = _sigmoid(z[:, hid:2 * hid])
    gg = np.tanh(z[:, 2 * hid:3 * hid])
    og = _sigmoid(z[:, 3 * hid:])
    c_new = fg * c.data + ig * gg
    tc = np.tanh(c_new)
    h_new = og * tc
    if mask is not None:
        m = np.asarray(mask, dtype=x.dtype)[:, None]
        h_new = m * h_new + (1 - m) * h.data
        c_new = m * c_new + (1 - m) * c.data
    else:
        m = None

    def bw(g):
        gh, gc = g[:, :hid], g[:, hid:]
        if m is not None:
            gh_pass, gc_pass = (1 - m) * gh, (1 - m) * gc
            gh, gc = m * gh, m * gc
        else:
            gh_pass = gc_pass = 0
        dc = gc + gh * og * (1 - tc * tc)
        dz = np.concatenate(
            [
                dc * gg * ig * (1 - ig),
                dc * c.data * fg * (1 - fg),
                dc * ig * (1 - gg * gg),
                gh * tc * og * (1 - og),
            ],
            axis=1,
        )
        dx = dz @ p.wx.data.T if x.requires_grad else None
        dh = dz @ p.wh.data.T + gh_pass
        dcp = dc * fg + gc_pass
        return dx, dh, dcp, x.data.T @ dz, h.data.T @ dz, dz.sum(axis=0)

    hc = make(np.concatenate([h_new, c_new], axis=1), (x, h, c, p.wx, p.wh, p.b), bw, "lstm_step")
    return take(hc, (slice(None), slice(0, hid))), take(hc, (slice(None), slice(hid, 2 * hid)))


def lstm_zero_state(batch: int, hidden: int, dtype) -> tuple[Tensor, Tensor]:
    z = np.zeros((batch, hidden), dtype=dtype)
    return Tensor(z), Tensor(z.copy())


def bilstm(seq: Tensor, fwd: LSTMParams, bwd: LSTMParams, mask: np.ndarray) -> Tensor:
    """Bidirectional LSTM over ``(B, n, D)``; returns ``(B, n, 2*hidden)``.

    Masked steps get zero input and leave the state untouched, so trailing
    padding is skipped by the reverse direction.
    """
    b, n, _ = seq.shape
    if n == 0:
        raise ValueError("bilstm needs a non-empty sequence")
    mask = np.asarray(mask, dtype=seq.dtype)
    seq = scale(seq, mask[:, :, None])
    steps = [take(seq, (slice(None), t)) for t in range(n)]
    outs_f, outs_b = [None] * n, [None] * n
    h, c = lstm_zero_state(b, fwd.hidden, seq.dtype)
    for t in range(n):
        h, c = lstm_step(steps[t], h, c, fwd, mask[:, t])
        outs_f[t] = h
    h, c = lstm_zero_state(b, bwd.hidden, seq.dtype)
    for t in reversed(range(n)):
        h, c = lstm_step(steps[t], h, c, bwd, mask[:, t])
        outs_b[t] = h
    return stack([concat([outs_f[t], outs_b[t]]) for t in range(n)], axis=1)


@dataclass
class AttentionParams:
    w1: Param
    w2: Param
    v: Param

    def params(self) -> list[Param]:
        return [self.w1, self.w2, self.v]


def bahdanau_attention(state: Tensor, memory: Tensor, p: AttentionParams, mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Additive attention of ``state (B, ds)`` over ``memory (B, n, dm)``.

    Returns the context ``(B, dm)`` and the weights ``(B, n)``.
    """
    s, mem = as_tensor(state), as_tensor(memory)
    bsz, n, dm = mem.shape
    mask = np.ones((bsz, n), dtype=bool) if mask is None else np.asarray(mask).astype(bool)
    if not mask.any(axis=1).all():
        raise ValueError("bahdanau_attention: every memory row is masked")
    keys = mem.data @ p.w2.data
    q = s.data @ p.w1.data
    e = np.tanh(keys + q[:, None, :])
    scores = np.where(mask, e @ p.v.data, -np.inf)
    w = _softmax(scores)
    ctx = np.einsum("bn,bnd->bd", w, mem.data)

    def bw(g):
        dw = np.einsum("bnd,bd->bn", mem.data, g)
        dsc = w * (dw - (w * dw).sum(axis=1, keepdims=True))
        dv = np.einsum("bn,bna->a", dsc, e)
        dpre = dsc[:, :, None] * p.v.data * (1 - e * e)
        dq = dpre.sum(axis=1)
        dmem = w[:, :, None] * g[:, None, :] + dpre @ p.w2.data.T
        dw2 = np.einsum("bnd,bna->da", mem.data, dpre)
        return dq @ p.w1.data.T, dmem, s.data.T @ dq, dw2, dv

    out = make(ctx, (s, mem, p.w1, p.w2, p.v), bw, "attention")
    return out, w
