"""A small float64 tensor type with reverse-mode differentiation.

Every op returns a new :class:`Tensor` holding references to its inputs and a
closure mapping the output gradient to input gradients. :func:`backward`
orders the reachable graph topologically (the tape) and sweeps it once in
reverse, summing contributions of tensors that are used more than once.

Broadcasting is limited to what ``add``/``mul`` need for biases and scalar
weights: the smaller operand's gradient is summed back to its own shape.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple[Tensor, ...] = (),
        _backward: Backward | None = None,
        op: str = "",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward: Backward, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward, op)
    return Tensor(data, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    """Elementwise product; a 0-d operand acts as a differentiable scalar weight."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty sequence")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ValueError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(data, tuple(tensors), lambda g: np.split(g, bounds, axis=axis), "concat")


def _check_mask(mask: np.ndarray, width: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (width,):
        raise ValueError(f"mask of shape {mask.shape} does not match channel width {width}")
    return mask


def mask_select(x: Tensor, mask) -> Tensor:
    """Channels of ``x`` (last axis) where ``mask`` is true."""
    mask = _check_mask(mask, x.shape[-1])

    def back(g):
        full = np.zeros(x.shape)
        full[..., mask] = g
        return (full,)

    return _make(x.data[..., mask], (x,), back, "mask_select")


def mask_merge(selected: Tensor, rest: Tensor, mask) -> Tensor:
    """Inverse of a partition: ``selected`` fills the true channels, ``rest`` the others."""
    mask = np.asarray(mask, dtype=bool)
    k = int(mask.sum())
    if selected.shape[-1] != k or rest.shape[-1] != mask.size - k or selected.shape[:-1] != rest.shape[:-1]:
        raise ValueError(
            f"mask_merge: shapes {selected.shape}/{rest.shape} do not fit a mask with {k} of {mask.size} set"
        )
    out = np.empty(selected.shape[:-1] + (mask.size,))
    out[..., mask] = selected.data
    out[..., ~mask] = rest.data
    return _make(out, (selected, rest), lambda g: (g[..., mask], g[..., ~mask]), "mask_merge")


def index(x: Tensor, i) -> Tensor:
    """A single element of ``x`` as a 0-d tensor."""

    def back(g):
        full = np.zeros(x.shape)
        full[i] = g
        return (full,)

    return _make(np.asarray(x.data[i]), (x,), back, "index")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.data.ndim == 0 or x.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-wise softmax of ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or logits.shape[1] == 0 or logits.shape[0] == 0:
        raise ValueError(f"cross_entropy expects non-empty (batch, classes) logits, got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ValueError("labels do not match the logits batch size")
    if not np.isfinite(logits.data).all():
        raise FloatingPointError("non-finite logits reached the loss")
    logp = log_softmax_np(logits.data)
    rows = np.arange(len(labels))
    loss = -logp[rows, labels].mean()

    def back(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / len(labels)),)

    return _make(np.asarray(loss), (logits,), back, "cross_entropy")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors the op name
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    if n == 0:
        raise ValueError("mean of an empty tensor")
    return _make(np.asarray(x.data.mean()), (x,), lambda g: (np.full(x.shape, g / n),), "mean")


def build_tape(loss: Tensor) -> list[Tensor]:
    """Differentiable nodes reachable from ``loss``, every node after all of its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of scalar ``loss`` for every reachable leaf with ``requires_grad``.

    Each leaf's ``.grad`` is overwritten with its total derivative; the same
    arrays are returned keyed by leaf.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is detached: no input requires grad")
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("non-finite loss")
    tape = build_tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g
            leaves[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=np.float64)
    return leaves


def parameters_grads(params: Iterable[Tensor], grads: dict[Tensor, np.ndarray]) -> list[np.ndarray]:
    """Gradient for each of ``params``, zeros where the loss did not reach it."""
    return [grads[p] if p in grads else np.zeros(p.shape) for p in params]
