"""Continuous-relaxation supernet over a single-input DAG cell.

Nodes ``0 .. num_input_nodes-1`` are cell inputs; every later node ``j``
receives an edge from each ``i < j``. Node outputs are combined with
softmax(beta) edge weights, and the cell emits the concatenation of its
intermediate nodes. Architecture logits are shared by all stacked cells;
op weights are per cell.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from .ops import ALL_OPS, Edge, OpKind, mixed_op_forward, pc_mixed_op_forward, sample_channel_mask


class SearchMode(str, enum.Enum):
    DARTS = "darts"
    PC_DARTS = "pc_darts"


@dataclass(frozen=True)
class CellSpec:
    num_nodes: int = 4
    feature_dim: int = 8
    op_set: tuple[OpKind, ...] = ALL_OPS
    num_input_nodes: int = 1

    def __post_init__(self) -> None:
        ops = tuple(OpKind.parse(o) for o in self.op_set)
        if not ops:
            raise ValueError("op_set must not be empty")
        if len(set(ops)) != len(ops):
            raise ValueError("op_set contains duplicates")
        if self.num_input_nodes not in (1, 2):
            raise ValueError("num_input_nodes must be 1 or 2")
        if self.num_nodes <= self.num_input_nodes:
            raise ValueError("a cell needs at least one intermediate node")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        object.__setattr__(self, "op_set", ops)

    @property
    def intermediate_nodes(self) -> range:
        return range(self.num_input_nodes, self.num_nodes)

    def edge_list(self) -> list[tuple[int, int]]:
        return [(i, j) for j in self.intermediate_nodes for i in range(j)]

    @property
    def output_dim(self) -> int:
        return len(self.intermediate_nodes) * self.feature_dim


def _classifier(in_dim: int, num_classes: int, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    w = Tensor(rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(num_classes, in_dim)), requires_grad=True)
    b = Tensor(np.zeros(num_classes), requires_grad=True)
    return w, b


def next_cell_inputs(prev: list[Tensor], out_nodes: list[Tensor], num_input_nodes: int) -> list[Tensor]:
    """Inputs of the following cell: the mean of this cell's intermediate nodes (plus the last input)."""
    acc = out_nodes[0]
    for t in out_nodes[1:]:
        acc = T.add(acc, t)
    summary = T.scale(acc, 1.0 / len(out_nodes)) if len(out_nodes) > 1 else acc
    return [summary] if num_input_nodes == 1 else [prev[-1], summary]


@dataclass
class SupernetState:
    """Network weights ``w`` plus architecture logits ``alpha`` (per edge) and ``beta`` (per node)."""

    spec: CellSpec
    num_classes: int
    q: int
    num_cells: int
    alpha: dict[tuple[int, int], Tensor]
    beta: dict[int, Tensor]
    cells: list[dict[tuple[int, int], Edge]]
    classifier_w: Tensor
    classifier_b: Tensor
    mode: SearchMode = SearchMode.PC_DARTS
    _beta_zero: dict[int, Tensor] = field(default_factory=dict, repr=False)

    @classmethod
    def create(
        cls,
        spec: CellSpec,
        num_classes: int,
        q: int = 2,
        num_cells: int = 1,
        seed: int = 0,
        mode: SearchMode | str = SearchMode.PC_DARTS,
    ) -> SupernetState:
        if q < 1 or spec.feature_dim % q:
            raise ValueError(f"q={q} must divide feature_dim={spec.feature_dim}")
        if num_cells < 1:
            raise ValueError("num_cells must be >= 1")
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0])))
        alpha = {e: Tensor(np.zeros(len(spec.op_set)), requires_grad=True) for e in spec.edge_list()}
        beta = {j: Tensor(np.zeros(j), requires_grad=True) for j in spec.intermediate_nodes}
        cells = []
        for _ in range(num_cells):
            cells.append(
                {
                    (i, j): Edge.create(i, j, spec.op_set, spec.feature_dim, rng, alpha=alpha[(i, j)])
                    for (i, j) in spec.edge_list()
                }
            )
        w, b = _classifier(spec.output_dim, num_classes, rng)
        return cls(spec, num_classes, q, num_cells, alpha, beta, cells, w, b, SearchMode(mode))

    def weights(self) -> list[Tensor]:
        out: list[Tensor] = []
        for cell in self.cells:
            for e in self.spec.edge_list():
                out.extend(cell[e].weights())
        out += [self.classifier_w, self.classifier_b]
        return out

    def arch_parameters(self) -> list[Tensor]:
        params = [self.alpha[e] for e in self.spec.edge_list()]
        if self.mode is SearchMode.PC_DARTS:
            params += [self.beta[j] for j in self.spec.intermediate_nodes]
        return params

    def edge_weights(self, j: int) -> Tensor:
        """softmax over node ``j``'s incoming edges; beta is held at zero in darts mode."""
        if self.mode is SearchMode.DARTS:
            if j not in self._beta_zero:
                self._beta_zero[j] = Tensor(np.zeros(j))
            return T.softmax(self._beta_zero[j])
        return T.softmax(self.beta[j])

    def sample_masks(self, rng: np.random.Generator) -> list[dict[tuple[int, int], np.ndarray]]:
        return [
            {e: sample_channel_mask(self.spec.feature_dim, self.q, rng) for e in self.spec.edge_list()}
            for _ in range(self.num_cells)
        ]


def cell_forward(
    state: SupernetState,
    inputs: Tensor | Sequence[Tensor],
    cell_index: int = 0,
    masks: dict[tuple[int, int], np.ndarray] | None = None,
) -> tuple[Tensor, list[Tensor]]:
    """One cell: returns ``(concat of intermediate nodes, list of intermediate nodes)``.

    With ``masks`` every edge uses the partial-channel mixture; without, the full mixture.
    """
    spec = state.spec
    if isinstance(inputs, Tensor):
        inputs = [inputs] * spec.num_input_nodes
    if len(inputs) != spec.num_input_nodes:
        raise ValueError(f"cell expects {spec.num_input_nodes} inputs, got {len(inputs)}")
    for x in inputs:
        if x.shape[-1] != spec.feature_dim:
            raise ValueError(f"input width {x.shape[-1]} != feature_dim {spec.feature_dim}")
    cell = state.cells[cell_index]
    nodes: list[Tensor] = list(inputs)
    for j in spec.intermediate_nodes:
        w = state.edge_weights(j)
        acc: Tensor | None = None
        for i in range(j):
            edge = cell[(i, j)]
            if masks is None:
                f = mixed_op_forward(edge, nodes[i])
            else:
                f = pc_mixed_op_forward(edge, nodes[i], masks[(i, j)])
            # a singleton softmax is exactly 1.0, so one incoming edge passes through unscaled
            term = T.mul(T.index(w, i), f)
            acc = term if acc is None else T.add(acc, term)
        nodes.append(acc)
    inter = nodes[spec.num_input_nodes:]
    return T.concat(inter, axis=-1), inter


def supernet_logits(
    state: SupernetState, x: np.ndarray | Tensor, rng: np.random.Generator | None = None
) -> Tensor:
    """Forward a batch through all cells and the linear head.

    In pc_darts mode fresh channel masks are drawn from ``rng`` for every edge of every cell.
    """
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if state.mode is SearchMode.PC_DARTS and rng is None:
        raise ValueError("pc_darts forward needs an rng for channel masks")
    masks = state.sample_masks(rng) if state.mode is SearchMode.PC_DARTS else None
    inputs = [x] * state.spec.num_input_nodes
    out = None
    for c in range(state.num_cells):
        out, inter = cell_forward(state, inputs, c, None if masks is None else masks[c])
        inputs = next_cell_inputs(inputs, inter, state.spec.num_input_nodes)
    logits = T.matmul(out, T.transpose(state.classifier_w))
    return T.add(logits, state.classifier_b)
