"""Differentiable cell search over vector-valued candidate operations."""
from .genotype import DiscreteNet, Genotype, TrainConfig, TrainResult, discretize, evaluate, topk_accuracy, train_discrete
from .model import CellSpec, SearchMode, SupernetState, cell_forward, supernet_logits
from .ops import ALL_OPS, Edge, OpKind, apply_op, mixed_op_forward, pc_mixed_op_forward, sample_channel_mask
from .search import SearchConfig, SearchDiverged, SearchHistory, bilevel_search

__all__ = [
    "ALL_OPS", "CellSpec", "DiscreteNet", "Edge", "Genotype", "OpKind", "SearchConfig", "SearchDiverged",
    "SearchHistory", "SearchMode", "SupernetState", "TrainConfig", "TrainResult", "apply_op", "bilevel_search",
    "cell_forward", "discretize", "evaluate", "mixed_op_forward", "pc_mixed_op_forward", "sample_channel_mask",
    "supernet_logits", "topk_accuracy", "train_discrete",
]
