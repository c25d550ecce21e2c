"""SGD with momentum, Adam, and a cosine learning-rate schedule.

Weight decay is classic L2: ``decay * p`` is added to the gradient before the
update. Optimizer state lives in a dict keyed by parameter.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import Tensor


def _check(params: Sequence[Tensor], grads: Sequence[np.ndarray]) -> None:
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if np.shape(g) != p.shape:
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")


def sgd_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    state: dict | None = None,
) -> None:
    """``buf = momentum * buf + g; p -= lr * buf`` (first step: ``buf = g``)."""
    _check(params, grads)
    state = {} if state is None else state
    for p, g in zip(params, grads):
        g = np.asarray(g, dtype=np.float64)
        if weight_decay:
            g = g + weight_decay * p.data
        if momentum:
            buf = state.get(p)
            buf = g.copy() if buf is None else momentum * buf + g
            state[p] = buf
            g = buf
        p.data -= lr * g


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    weight_decay: float = 0.0,
    state: dict | None = None,
    eps: float = 1e-8,
) -> None:
    _check(params, grads)
    state = {} if state is None else state
    b1, b2 = betas
    for p, g in zip(params, grads):
        g = np.asarray(g, dtype=np.float64)
        if weight_decay:
            g = g + weight_decay * p.data
        t, m, v = state.get(p, (0, np.zeros(p.shape), np.zeros(p.shape)))
        t += 1
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state[p] = (t, m, v)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.state: dict = {}

    def step(self, grads: Sequence[np.ndarray], lr: float | None = None) -> None:
        sgd_step(self.params, grads, self.lr if lr is None else lr, self.momentum, self.weight_decay, self.state)


class Adam:
    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        weight_decay: float = 0.0,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.weight_decay = weight_decay
        self.eps = eps
        self.state: dict = {}

    def step(self, grads: Sequence[np.ndarray]) -> None:
        adam_step(self.params, grads, self.lr, self.betas, self.weight_decay, self.state, self.eps)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if total_steps <= 0 or not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
