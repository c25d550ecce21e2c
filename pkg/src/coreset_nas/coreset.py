"""Greedy k-center core-set selection, stratified by class.

The per-class procedure starts from a small random seed set and repeatedly
adds the point whose distance to its nearest chosen center is largest. The
seed points act as centers but are not part of the returned core-set.
"""
from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding_io import EmbeddedDataset
from .metrics import DistanceMetric, distance, distances_to

EXACT_MAX_POINTS = 16
EXACT_MAX_SUBSETS = 1_000_000


class SelectionError(ValueError):
    pass


def selection_count(ratio: float, class_size: int) -> int:
    """``ceil(ratio * class_size)``, robust to float noise such as ``0.07 * 100``."""
    return int(math.ceil(ratio * class_size - 1e-9))


def class_rng(seed: int, class_id: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, class_id, stream)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, class_id, stream])))


def _as_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2:
        raise ValueError(f"points must be a list of vectors, got shape {x.shape}")
    return x


def greedy_k_center_trace(
    points, initial: Sequence[int], k: int, metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN
) -> tuple[list[int], list[float]]:
    """Greedy farthest-point selection, also returning each step's max-min distance.

    Distances in the trace are in ``metric`` units.
    """
    metric = DistanceMetric.parse(metric)
    x = _as_points(points)
    n = len(x)
    if n == 0:
        raise SelectionError("point list is empty")
    initial = [int(i) for i in initial]
    if not initial:
        raise SelectionError("initial center set is empty")
    if len(set(initial)) != len(initial) or min(initial) < 0 or max(initial) >= n:
        raise SelectionError("initial indices must be distinct and within range")
    if k < 0 or k > n - len(initial):
        raise SelectionError(f"k={k} exceeds the {n - len(initial)} non-initial points")

    inner = metric.search_metric
    mins = np.full(n, np.inf)
    for i in initial:
        np.minimum(mins, distances_to(inner, x, x[i]), out=mins)
    # Chosen points are excluded from the argmax outright, even if duplicated elsewhere.
    mins[initial] = -np.inf

    order: list[int] = []
    radii: list[float] = []
    for _ in range(k):
        j = int(np.argmax(mins))  # first maximum == lowest index on ties
        order.append(j)
        r = float(mins[j])
        radii.append(math.sqrt(r) if inner is not metric else r)
        np.minimum(mins, distances_to(inner, x, x[j]), out=mins)
        mins[j] = -np.inf
    return order, radii


def greedy_k_center(
    points, initial: Sequence[int], k: int, metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN
) -> list[int]:
    """Indices of ``k`` new centers in selection order.

    Keeps a per-point nearest-center distance cache, so each step costs one
    O(n d) scan. Euclidean selection runs on squared distances internally.
    """
    return greedy_k_center_trace(points, initial, k, metric)[0]


def greedy_k_center_naive(
    points, initial: Sequence[int], k: int, metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN
) -> list[int]:
    """Reference implementation recomputing every point-to-center distance each step."""
    x = _as_points(points)
    chosen = list(initial)
    picked: list[int] = []
    for _ in range(k):
        best, best_val = -1, -math.inf
        for i in range(len(x)):
            if i in chosen:
                continue
            m = min(distance(metric, x[i], x[j]) for j in chosen)
            if m > best_val:
                best, best_val = i, m
        chosen.append(best)
        picked.append(best)
    return picked


def covering_radius(
    points, centers: Sequence[int], metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN
) -> float:
    """Largest distance from any point to its nearest center."""
    metric = DistanceMetric.parse(metric)
    x = _as_points(points)
    centers = list(centers)
    if not centers:
        raise SelectionError("center set is empty")
    if len(x) == 0:
        return 0.0
    mins = np.full(len(x), np.inf)
    for c in centers:
        np.minimum(mins, distances_to(metric, x, x[c]), out=mins)
    return float(mins.max())


def exact_k_center(
    points, k: int, metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN
) -> tuple[list[int], float]:
    """Optimal k-center by exhaustive search; only for tiny instances.

    Returns the lexicographically smallest optimal index set and its radius.
    """
    metric = DistanceMetric.parse(metric)
    x = _as_points(points)
    n = len(x)
    if not 1 <= k <= n:
        raise SelectionError(f"k must lie in [1, {n}]")
    if n > EXACT_MAX_POINTS or math.comb(n, k) > EXACT_MAX_SUBSETS:
        raise SelectionError(
            f"instance too large for exhaustive search (n={n}, k={k}, limit n<={EXACT_MAX_POINTS})"
        )
    dmat = np.stack([distances_to(metric, x, x[j]) for j in range(n)], axis=1)
    best_set: tuple[int, ...] | None = None
    best_r = math.inf
    combos = itertools.combinations(range(n), k)
    while True:
        chunk = np.array(list(itertools.islice(combos, 4096)), dtype=np.int64)
        if chunk.size == 0:
            break
        # radius of each subset in the chunk, enumerated in lexicographic order
        radii = dmat[:, chunk].min(axis=2).max(axis=0)
        j = int(np.argmin(radii))
        if radii[j] < best_r:
            best_r, best_set = float(radii[j]), tuple(int(i) for i in chunk[j])
    assert best_set is not None
    return list(best_set), best_r


@dataclass(frozen=True)
class CoresetConfig:
    ratio: float
    seed: int = 0
    seed_set_size: int = 1
    metric: DistanceMetric = DistanceMetric.EUCLIDEAN

    def __post_init__(self) -> None:
        if not 0 < self.ratio <= 1:
            raise SelectionError(f"ratio must lie in (0, 1], got {self.ratio}")
        if self.seed_set_size < 1:
            raise SelectionError("seed_set_size must be >= 1")
        object.__setattr__(self, "metric", DistanceMetric.parse(self.metric))


@dataclass
class SelectionResult:
    ratio: float
    seed: int
    metric: DistanceMetric
    method: str = "coreset"
    per_class_selected: dict[int, list[int]] = field(default_factory=dict)
    per_class_seeds: dict[int, list[int]] = field(default_factory=dict)
    objective_per_class: dict[int, float] = field(default_factory=dict)

    def indices(self) -> np.ndarray:
        """All selected dataset indices (seeds excluded), ascending."""
        parts = [np.asarray(v, dtype=np.int64) for v in self.per_class_selected.values()]
        if not parts:
            return np.zeros(0, dtype=np.int64)
        return np.sort(np.concatenate(parts))

    def counts(self) -> dict[int, int]:
        return {c: len(v) for c, v in self.per_class_selected.items()}

    @property
    def max_radius(self) -> float:
        return max(self.objective_per_class.values())

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "ratio": self.ratio,
            "seed": self.seed,
            "metric": self.metric.value,
            "classes": [
                {
                    "class_id": c,
                    "seeds": list(self.per_class_seeds.get(c, [])),
                    "selected": list(self.per_class_selected[c]),
                    "covering_radius": self.objective_per_class.get(c),
                }
                for c in sorted(self.per_class_selected)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> SelectionResult:
        res = cls(
            ratio=float(doc["ratio"]),
            seed=int(doc["seed"]),
            metric=DistanceMetric.parse(doc["metric"]),
            method=doc.get("method", "coreset"),
        )
        for entry in doc["classes"]:
            c = int(entry["class_id"])
            res.per_class_selected[c] = [int(i) for i in entry["selected"]]
            res.per_class_seeds[c] = [int(i) for i in entry["seeds"]]
            if entry.get("covering_radius") is not None:
                res.objective_per_class[c] = float(entry["covering_radius"])
        return res

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> SelectionResult:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _select_class(ds: EmbeddedDataset, c: int, cfg: CoresetConfig):
    idx = ds.class_indices(c)
    m = len(idx)
    need = selection_count(cfg.ratio, m)
    if m < cfg.seed_set_size + need:
        raise SelectionError(
            f"class {c} has {m} items; needs {cfg.seed_set_size} seeds + {need} selections"
        )
    x = ds.vectors[idx].astype(np.float64)
    seeds_local = class_rng(cfg.seed, c).choice(m, size=cfg.seed_set_size, replace=False)
    seeds_local = [int(i) for i in seeds_local]
    picked = greedy_k_center(x, seeds_local, need, cfg.metric)
    radius = covering_radius(x, seeds_local + picked, cfg.metric)
    return [int(idx[i]) for i in picked], [int(idx[i]) for i in seeds_local], radius


def select_coreset(ds: EmbeddedDataset, cfg: CoresetConfig, workers: int = 1) -> SelectionResult:
    """Run seeded greedy k-center independently inside every class.

    Each class draws its seed set from its own RNG stream, so the result does
    not depend on ``workers``.
    """
    classes = range(ds.num_classes)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _select_class(ds, c, cfg), classes))
    else:
        parts = [_select_class(ds, c, cfg) for c in classes]
    res = SelectionResult(cfg.ratio, cfg.seed, cfg.metric, "coreset")
    for c, (picked, seeds, radius) in zip(classes, parts):
        res.per_class_selected[c] = picked
        res.per_class_seeds[c] = seeds
        res.objective_per_class[c] = radius
    return res


def random_select(
    ds: EmbeddedDataset,
    ratio: float,
    seed: int,
    metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN,
) -> SelectionResult:
    """Uniform per-class sampling without replacement; the baseline for core-sets."""
    if not 0 < ratio <= 1:
        raise SelectionError(f"ratio must lie in (0, 1], got {ratio}")
    metric = DistanceMetric.parse(metric)
    res = SelectionResult(ratio, seed, metric, "random")
    for c in range(ds.num_classes):
        idx = ds.class_indices(c)
        need = selection_count(ratio, len(idx))
        local = class_rng(seed, c, stream=1).choice(len(idx), size=need, replace=False)
        res.per_class_selected[c] = [int(idx[i]) for i in local]
        res.per_class_seeds[c] = []
        if need:
            res.objective_per_class[c] = covering_radius(
                ds.vectors[idx].astype(np.float64), [int(i) for i in local], metric
            )
    return res


def full_select(ds: EmbeddedDataset) -> SelectionResult:
    """Every index of every class; the full-data reference point."""
    res = SelectionResult(1.0, 0, DistanceMetric.EUCLIDEAN, "full")
    for c in range(ds.num_classes):
        res.per_class_selected[c] = [int(i) for i in ds.class_indices(c)]
        res.per_class_seeds[c] = []
        res.objective_per_class[c] = 0.0
    return res
