"""Discretizing a trained supernet and training the resulting fixed network."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..embedding_io import EmbeddedDataset
from ..optim import SGD, cosine_lr
from ..tensor import Tensor
from .model import SupernetState, _classifier, next_cell_inputs
from .ops import OpKind, apply_op, init_op_param

RETAINED_EDGES = 2


@dataclass
class Genotype:
    """Retained ``(source node, op)`` pairs for every intermediate node."""

    feature_dim: int
    num_nodes: int
    nodes: list[list[tuple[int, OpKind]]]
    num_input_nodes: int = 1

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "num_nodes": self.num_nodes,
            "num_input_nodes": self.num_input_nodes,
            "nodes": [
                {"retained": [{"from": src, "op": op.value} for src, op in node]} for node in self.nodes
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> Genotype:
        g = cls(
            feature_dim=int(doc["feature_dim"]),
            num_nodes=int(doc["num_nodes"]),
            nodes=[
                [(int(r["from"]), OpKind.parse(r["op"])) for r in node["retained"]] for node in doc["nodes"]
            ],
            num_input_nodes=int(doc.get("num_input_nodes", 1)),
        )
        g.validate()
        return g

    def validate(self) -> None:
        if len(self.nodes) != self.num_nodes - self.num_input_nodes:
            raise ValueError("genotype node count does not match num_nodes")
        for offset, node in enumerate(self.nodes):
            j = self.num_input_nodes + offset
            if len(node) != min(RETAINED_EDGES, j):
                raise ValueError(f"node {j} retains {len(node)} edges, expected {min(RETAINED_EDGES, j)}")
            for src, op in node:
                if not 0 <= src < j:
                    raise ValueError(f"node {j} has an edge from invalid source {src}")
                if op is OpKind.ZERO:
                    raise ValueError(f"node {j} retains a zero op")

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Genotype:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def discretize(state: SupernetState) -> Genotype:
    """Keep each edge's strongest non-zero op, then each node's top edges by edge x op weight.

    A node keeps ``min(2, in-degree)`` edges; ties go to the lower source index.
    """
    spec = state.spec
    nonzero = [o for o, k in enumerate(spec.op_set) if k is not OpKind.ZERO]
    if not nonzero:
        raise ValueError("op set has no non-zero operation to retain")
    nodes = []
    for j in spec.intermediate_nodes:
        edge_w = _softmax(state.beta[j].data)
        scored = []
        for i in range(j):
            a = state.alpha[(i, j)].data
            # argmax on raw logits is exactly invariant to constant shifts
            best = max(nonzero, key=lambda o: (a[o], -o))
            p = _softmax(a)[best]
            scored.append((-(edge_w[i] * p), i, spec.op_set[best]))
        scored.sort(key=lambda t: (t[0], t[1]))
        kept = sorted(scored[: min(RETAINED_EDGES, j)], key=lambda t: t[1])
        nodes.append([(i, op) for _, i, op in kept])
    return Genotype(spec.feature_dim, spec.num_nodes, nodes, spec.num_input_nodes)


@dataclass
class DiscreteNet:
    genotype: Genotype
    num_classes: int
    num_cells: int
    cells: list[list[list[tuple[int, OpKind, Tensor | None]]]]
    classifier_w: Tensor
    classifier_b: Tensor

    @classmethod
    def create(cls, genotype: Genotype, num_classes: int, num_cells: int = 1, seed: int = 0) -> DiscreteNet:
        genotype.validate()
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 10])))
        d = genotype.feature_dim
        cells = []
        for _ in range(num_cells):
            cells.append([[(src, op, init_op_param(op, d, rng)) for src, op in node] for node in genotype.nodes])
        out_dim = len(genotype.nodes) * d
        w, b = _classifier(out_dim, num_classes, rng)
        return cls(genotype, num_classes, num_cells, cells, w, b)

    def weights(self) -> list[Tensor]:
        out = [p for cell in self.cells for node in cell for _, _, p in node if p is not None]
        return out + [self.classifier_w, self.classifier_b]

    def logits(self, x: np.ndarray | Tensor) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        n_in = self.genotype.num_input_nodes
        inputs = [x] * n_in
        out = None
        for cell in self.cells:
            nodes = list(inputs)
            for node in cell:
                acc = None
                for src, op, p in node:
                    term = apply_op(op, p, nodes[src])
                    acc = term if acc is None else T.add(acc, term)
                nodes.append(acc)
            inter = nodes[n_in:]
            out = T.concat(inter, axis=-1)
            inputs = next_cell_inputs(inputs, inter, n_in)
        return T.add(T.matmul(out, T.transpose(self.classifier_w)), self.classifier_b)


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    if len(labels) == 0:
        return float("nan")
    k = min(k, logits.shape[1])
    # stable sort on negated logits: ties rank the lower class index first
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float((top == labels[:, None]).any(axis=1).mean())


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr_w: float = 0.1
    momentum: float = 0.9
    weight_decay_w: float = 3e-5
    grad_clip: float = 5.0
    num_cells: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    if not max_norm or max_norm <= 0:
        return grads
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if total <= max_norm:
        return grads
    f = max_norm / (total + 1e-6)
    return [g * f for g in grads]


@dataclass
class TrainResult:
    model: DiscreteNet
    metrics: dict = field(default_factory=dict)


def evaluate(logits_fn, ds: EmbeddedDataset, batch_size: int = 512) -> dict:
    parts = []
    for start in range(0, len(ds), batch_size):
        parts.append(logits_fn(ds.vectors[start:start + batch_size].astype(np.float64)).data)
    logits = np.concatenate(parts) if parts else np.zeros((0, ds.num_classes))
    loss = float(-T.log_softmax_np(logits)[np.arange(len(ds)), ds.labels].mean()) if len(ds) else float("nan")
    out = {"loss": loss, "top1": topk_accuracy(logits, ds.labels, 1)}
    if ds.num_classes >= 5:
        out["top5"] = topk_accuracy(logits, ds.labels, 5)
    return out


def train_discrete(
    genotype: Genotype, train_ds: EmbeddedDataset, test_ds: EmbeddedDataset, cfg: TrainConfig
) -> TrainResult:
    """Train a freshly initialised network for ``genotype`` with cosine-annealed SGD.

    ``train_ds`` is the full training set; metrics are measured on ``test_ds``.
    """
    if train_ds.dim != genotype.feature_dim or test_ds.dim != genotype.feature_dim:
        raise ValueError(
            f"dataset dimension {train_ds.dim}/{test_ds.dim} != genotype feature_dim {genotype.feature_dim}"
        )
    if train_ds.num_classes != test_ds.num_classes:
        raise ValueError("train and test class counts differ")
    if len(train_ds) == 0:
        raise ValueError("training set is empty")
    model = DiscreteNet.create(genotype, train_ds.num_classes, cfg.num_cells, cfg.seed)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, 11])))
    params = model.weights()
    opt = SGD(params, cfg.lr_w, cfg.momentum, cfg.weight_decay_w)
    x_all = train_ds.vectors.astype(np.float64)
    y_all = train_ds.labels
    initial = evaluate(model.logits, test_ds)
    losses = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_w)
        perm = rng.permutation(len(train_ds))
        total, batches = 0.0, 0
        for start in range(0, len(perm), cfg.batch_size):
            b = perm[start:start + cfg.batch_size]
            loss = T.cross_entropy(model.logits(x_all[b]), y_all[b])
            grads = T.parameters_grads(params, T.backward(loss))
            opt.step(clip_grad_norm(grads, cfg.grad_clip), lr=lr)
            total += loss.item()
            batches += 1
        losses.append(total / batches)
    final = evaluate(model.logits, test_ds)
    metrics = {
        "train_loss": losses,
        "test_loss": final["loss"],
        "top1": final["top1"],
        "untrained_top1": initial["top1"],
    }
    if "top5" in final:
        metrics["top5"] = final["top5"]
    return TrainResult(model, metrics)
