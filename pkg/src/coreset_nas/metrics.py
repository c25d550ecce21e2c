"""Distance metrics over embedding vectors, scalar and batched.

All kernels accumulate in float64 regardless of storage precision. Ties in
nearest-center queries resolve to the lowest center index.
"""
from __future__ import annotations

import enum
import math
from typing import Sequence

import numpy as np


class DistanceMetric(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    SQUARED_EUCLIDEAN = "squared_euclidean"
    COSINE = "cosine_distance"

    @classmethod
    def parse(cls, value: str | DistanceMetric) -> DistanceMetric:
        if isinstance(value, DistanceMetric):
            return value
        aliases = {"squared": cls.SQUARED_EUCLIDEAN, "cosine": cls.COSINE}
        if value in aliases:
            return aliases[value]
        return cls(value)

    @property
    def search_metric(self) -> DistanceMetric:
        """Metric with the same orderings that is cheapest to evaluate."""
        return DistanceMetric.SQUARED_EUCLIDEAN if self is DistanceMetric.EUCLIDEAN else self


def _as_vec(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).reshape(-1)


def distance(metric: DistanceMetric | str, a, b) -> float:
    metric = DistanceMetric.parse(metric)
    a, b = _as_vec(a), _as_vec(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    if metric is DistanceMetric.COSINE:
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(x * x for x in b))
        if na == 0 or nb == 0:
            raise ValueError("cosine distance is undefined for a zero vector")
        return 1.0 - sum(x * y for x, y in zip(a, b)) / (na * nb)
    sq = sum((x - y) * (x - y) for x, y in zip(a, b))
    return sq if metric is DistanceMetric.SQUARED_EUCLIDEAN else math.sqrt(sq)


def distances_to(metric: DistanceMetric | str, points: np.ndarray, query) -> np.ndarray:
    """Distance from every row of ``points`` to ``query``; shape ``(n,)``."""
    metric = DistanceMetric.parse(metric)
    pts = np.asarray(points, dtype=np.float64)
    q = _as_vec(query)
    if pts.ndim != 2 or pts.shape[1] != q.size:
        raise ValueError(f"dimension mismatch: points {pts.shape} vs query {q.size}")
    if metric is DistanceMetric.COSINE:
        pn = np.linalg.norm(pts, axis=1)
        qn = np.linalg.norm(q)
        if qn == 0 or (pn == 0).any():
            raise ValueError("cosine distance is undefined for a zero vector")
        return 1.0 - (pts @ q) / (pn * qn)
    diff = pts - q
    sq = np.einsum("ij,ij->i", diff, diff)
    return sq if metric is DistanceMetric.SQUARED_EUCLIDEAN else np.sqrt(sq)


def pairwise(metric: DistanceMetric | str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Full ``(len(x), len(y))`` distance matrix."""
    y = np.asarray(y, dtype=np.float64)
    out = np.empty((len(x), len(y)))
    # Column-at-a-time keeps the same arithmetic as distances_to.
    for j in range(len(y)):
        out[:, j] = distances_to(metric, x, y[j])
    return out


def min_distance_to_set(
    metric: DistanceMetric | str, query, centers: Sequence | np.ndarray
) -> tuple[float, int]:
    """Return ``(min distance, index of nearest center)``."""
    if len(centers) == 0:
        raise ValueError("center set is empty")
    d = distances_to(metric, np.asarray(centers, dtype=np.float64).reshape(len(centers), -1), query)
    j = int(np.argmin(d))
    return float(d[j]), j
