"""Candidate operations on feature vectors and the softmax-weighted mixture over them."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import tensor as T
from ..tensor import Tensor


class OpKind(str, enum.Enum):
    ZERO = "zero"
    SKIP = "skip_identity"
    LINEAR = "linear"
    LINEAR_RELU = "linear_relu"
    SCALE = "scale"

    @classmethod
    def parse(cls, value: str | OpKind) -> OpKind:
        if isinstance(value, OpKind):
            return value
        return cls.SKIP if value == "skip" else cls(value)

    @property
    def parametric(self) -> bool:
        return self in (OpKind.LINEAR, OpKind.LINEAR_RELU, OpKind.SCALE)


ALL_OPS: tuple[OpKind, ...] = tuple(OpKind)


def init_op_param(kind: OpKind, dim: int, rng: np.random.Generator) -> Tensor | None:
    """Fresh weights: ``dim x dim`` Gaussian with std ``1/sqrt(dim)`` for linear kinds, 1.0 for scale."""
    if kind in (OpKind.LINEAR, OpKind.LINEAR_RELU):
        return Tensor(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, dim)), requires_grad=True)
    if kind is OpKind.SCALE:
        return Tensor(np.asarray(1.0), requires_grad=True)
    return None


def apply_op(kind: OpKind, param: Tensor | None, x: Tensor) -> Tensor:
    """``o(x)`` for a batch of row vectors ``x`` of shape ``(batch, dim)``.

    Linear weights are stored ``(out, in)``, so the op computes ``x @ W.T``.
    """
    if kind is OpKind.ZERO:
        return T.zeros(x.shape)
    if kind is OpKind.SKIP:
        return x
    if kind is OpKind.SCALE:
        return T.mul(param, x)
    y = T.matmul(x, T.transpose(param))
    return T.relu(y) if kind is OpKind.LINEAR_RELU else y


@dataclass
class Edge:
    """A DAG edge ``src -> dst`` carrying the op set, its logits and op weights."""

    src: int
    dst: int
    op_set: tuple[OpKind, ...]
    alpha: Tensor
    params: dict[OpKind, Tensor] = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        src: int,
        dst: int,
        op_set: Sequence[OpKind],
        dim: int,
        rng: np.random.Generator,
        alpha: Tensor | None = None,
    ) -> Edge:
        op_set = tuple(OpKind.parse(o) for o in op_set)
        if alpha is None:
            alpha = Tensor(np.zeros(len(op_set)), requires_grad=True)
        params = {}
        for kind in op_set:
            p = init_op_param(kind, dim, rng)
            if p is not None:
                params[kind] = p
        return cls(src, dst, op_set, alpha, params)

    def weights(self) -> list[Tensor]:
        return [self.params[k] for k in self.op_set if k in self.params]


def mixed_op_forward(edge: Edge, x: Tensor) -> Tensor:
    """``sum_o softmax(alpha)_o * o(x)`` over the edge's candidate ops."""
    if edge.alpha.shape != (len(edge.op_set),):
        raise ValueError("alpha length does not match the op set")
    for kind, p in edge.params.items():
        if kind is not OpKind.SCALE and p.shape[1] != x.shape[-1]:
            raise ValueError(f"input width {x.shape[-1]} does not match op weights {p.shape}")
    weights = T.softmax(edge.alpha)
    out: Tensor | None = None
    for o, kind in enumerate(edge.op_set):
        if kind is OpKind.ZERO:
            continue  # contributes p_zero * 0 to the value and nothing to any gradient
        term = T.mul(T.index(weights, o), apply_op(kind, edge.params.get(kind), x))
        out = term if out is None else T.add(out, term)
    return T.zeros(x.shape) if out is None else out


def sample_channel_mask(dim: int, q: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask with exactly ``dim // q`` channels set, uniformly at random."""
    if q < 1 or dim % q:
        raise ValueError(f"q={q} must divide the feature dimension {dim}")
    mask = np.zeros(dim, dtype=bool)
    mask[rng.choice(dim, size=dim // q, replace=False)] = True
    return mask


def pc_mixed_op_forward(edge: Edge, x: Tensor, mask: np.ndarray) -> Tensor:
    """Partial-channel mixture: selected channels go through the mixture, the rest bypass.

    The ops see ``S * x`` (unselected channels zeroed). The output takes the
    mixture's selected channels and ``x``'s unselected channels.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (x.shape[-1],):
        raise ValueError(f"mask of length {mask.size} does not match input width {x.shape[-1]}")
    rest_shape = x.shape[:-1] + (int((~mask).sum()),)
    masked_in = T.mask_merge(T.mask_select(x, mask), T.zeros(rest_shape), mask)
    mixed = mixed_op_forward(edge, masked_in)
    return T.mask_merge(T.mask_select(mixed, mask), T.mask_select(x, ~mask), mask)
