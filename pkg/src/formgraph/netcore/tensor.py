"""Tensor and parameter types with a small reverse-mode engine.

Every op builds its output through :func:`make`, which attaches a backward
closure only when some parent needs a gradient.  Calling
:func:`backward` on a scalar walks the graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import hashlib

import numpy as np

CHECK_FINITE = True


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""

    def __init__(self, op: str):
        super().__init__(f"non-finite values produced by op '{op}'")
        self.op = op


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "op")

    def __init__(self, data, requires_grad: bool = False, op: str = "const"):
        self.data = np.asarray(data)
        self.grad = None
        self.parents: tuple = ()
        self.backward_fn = None
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, dtype={self.dtype})"


class Param(Tensor):
    """Trainable tensor carrying its gradient and Adam moments."""

    __slots__ = ("name", "adam_m", "adam_v")

    def __init__(self, value, name: str):
        super().__init__(np.array(value), requires_grad=True, op="param")
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def astype(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.grad = self.grad.astype(dtype)
        self.adam_m = self.adam_m.astype(dtype)
        self.adam_v = self.adam_v.astype(dtype)

    def zero_grad(self) -> None:
        self.grad[...] = 0


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def retain_grad(t: Tensor) -> Tensor:
    """Keep the gradient that reaches intermediate ``t`` in ``t.grad``."""
    t.grad = np.zeros_like(t.data)
    return t


def make(data: np.ndarray, parents, backward_fn, op: str) -> Tensor:
    """Wrap an op result; ``backward_fn(g)`` returns one grad (or None) per parent."""
    if CHECK_FINITE and data.dtype.kind == "f" and not np.isfinite(data).all():
        raise NonFiniteError(op)
    out = Tensor(data, op=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(param) into every reachable :class:`Param`."""
    if not loss.requires_grad:
        return
    if grad is None:
        if loss.data.size != 1:
            raise ValueError("backward() without grad needs a scalar output")
        grad = np.ones_like(loss.data)
    grads = {id(loss): grad}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Param):
            node.grad += g
            continue
        if node.grad is not None:
            node.grad = node.grad + g
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# Records the on/off pattern of every piecewise-linear op during a forward
# pass, so the gradient checker can discard points where a finite-difference
# step crosses a kink.
_kink_log: list | None = None


@contextlib.contextmanager
def record_kinks():
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


def recording_kinks() -> bool:
    return _kink_log is not None


def log_kink(pattern: np.ndarray) -> None:
    if _kink_log is not None:
        _kink_log.append(hashlib.blake2b(np.ascontiguousarray(pattern).tobytes(), digest_size=16).digest())
