"""First-order alternating search: SGD on weights with the training half, Adam on
architecture logits with the validation half once the warm-up epochs are over."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import tensor as T
from ..embedding_io import EmbeddedDataset
from ..optim import SGD, Adam, cosine_lr
from .genotype import clip_grad_norm, topk_accuracy
from .model import CellSpec, SearchMode, SupernetState, supernet_logits
from .ops import ALL_OPS, OpKind

# RNG stream ids, one per consumer so that disabling one consumer never shifts another
_STREAM_TRAIN = 1
_STREAM_ARCH = 2
_STREAM_EVAL = 3


class SearchDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    epochs: int = 20
    batch_size: int = 32
    lr_w: float = 0.1
    momentum: float = 0.9
    weight_decay_w: float = 3e-5
    lr_arch: float = 6e-3
    arch_betas: tuple[float, float] = (0.5, 0.999)
    weight_decay_arch: float = 1e-3
    q: int = 2
    warmup_fraction: float = 0.7
    mode: SearchMode = SearchMode.PC_DARTS
    seed: int = 0
    num_nodes: int = 4
    num_input_nodes: int = 1
    num_cells: int = 1
    op_set: tuple[OpKind, ...] = ALL_OPS
    grad_clip: float = 5.0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 <= self.warmup_fraction <= 1:
            raise ValueError("warmup_fraction must lie in [0, 1]")
        if self.q < 1:
            raise ValueError("q must be >= 1")
        object.__setattr__(self, "mode", SearchMode(self.mode))
        object.__setattr__(self, "arch_betas", tuple(float(b) for b in self.arch_betas))
        object.__setattr__(self, "op_set", tuple(OpKind.parse(o) for o in self.op_set))

    @property
    def warmup_epochs(self) -> int:
        return int(math.floor(self.warmup_fraction * self.epochs + 1e-9))


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    arch_updated: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SearchHistory:
    epochs: list[EpochStats] = field(default_factory=list)
    train_batch_losses: list[float] = field(default_factory=list)

    def to_dict(self) -> list[dict]:
        return [e.to_dict() for e in self.epochs]


def _stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


def _loss(state, x, y, rng, where: str):
    try:
        return T.cross_entropy(supernet_logits(state, x, rng), y)
    except FloatingPointError as exc:
        raise SearchDiverged(f"non-finite loss at {where}: {exc}") from None


def bilevel_search(
    train_split: EmbeddedDataset,
    val_split: EmbeddedDataset,
    cfg: SearchConfig,
    state: SupernetState | None = None,
    on_epoch_end: Callable[[int, SupernetState], None] | None = None,
) -> tuple[SupernetState, SearchHistory]:
    """Alternate weight and architecture steps for ``cfg.epochs`` epochs.

    ``on_epoch_end(epoch, state)`` is called after every epoch's evaluation.
    """
    if len(train_split) == 0 or len(val_split) == 0:
        raise ValueError("search needs non-empty train and validation splits")
    if train_split.dim != val_split.dim or train_split.num_classes != val_split.num_classes:
        raise ValueError("train and validation splits disagree on dimension or class count")
    if state is None:
        spec = CellSpec(cfg.num_nodes, train_split.dim, cfg.op_set, cfg.num_input_nodes)
        state = SupernetState.create(spec, train_split.num_classes, cfg.q, cfg.num_cells, cfg.seed, cfg.mode)
    weights = state.weights()
    arch = state.arch_parameters()
    w_opt = SGD(weights, cfg.lr_w, cfg.momentum, cfg.weight_decay_w)
    a_opt = Adam(arch, cfg.lr_arch, cfg.arch_betas, cfg.weight_decay_arch)
    train_rng = _stream(cfg.seed, _STREAM_TRAIN)
    arch_rng = _stream(cfg.seed, _STREAM_ARCH)
    eval_rng = _stream(cfg.seed, _STREAM_EVAL)

    xt, yt = train_split.vectors.astype(np.float64), train_split.labels
    xv, yv = val_split.vectors.astype(np.float64), val_split.labels
    history = SearchHistory()
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_w)
        update_arch = epoch >= cfg.warmup_epochs
        perm = train_rng.permutation(len(xt))
        vperm = arch_rng.permutation(len(xv)) if update_arch else None
        total, batches = 0.0, 0
        for b, start in enumerate(range(0, len(perm), cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            loss = _loss(state, xt[idx], yt[idx], train_rng, f"epoch {epoch} batch {b} (weights)")
            grads = T.parameters_grads(weights, T.backward(loss))
            w_opt.step(clip_grad_norm(grads, cfg.grad_clip), lr=lr)
            total += loss.item()
            batches += 1
            history.train_batch_losses.append(loss.item())
            if update_arch:
                vstart = (b * cfg.batch_size) % len(xv)
                vidx = np.take(vperm, range(vstart, vstart + cfg.batch_size), mode="wrap")
                vloss = _loss(state, xv[vidx], yv[vidx], arch_rng, f"epoch {epoch} batch {b} (architecture)")
                a_opt.step(T.parameters_grads(arch, T.backward(vloss)))
        logits = supernet_logits(state, xv, eval_rng).data
        val_loss = float(-T.log_softmax_np(logits)[np.arange(len(yv)), yv].mean())
        if not math.isfinite(val_loss):
            raise SearchDiverged(f"non-finite validation loss after epoch {epoch}")
        history.epochs.append(
            EpochStats(epoch, total / batches, val_loss, topk_accuracy(logits, yv, 1), update_arch)
        )
        if on_epoch_end is not None:
            on_epoch_end(epoch, state)
    return state, history
