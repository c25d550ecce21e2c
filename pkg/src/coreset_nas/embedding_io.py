"""Labeled embedding datasets: validation, binary/CSV persistence, synthetic blobs.

Binary layout (little endian)::

    b"CSET" | u32 version=1 | u32 n | u32 d | u32 C | n x (d x f32, u32 class_id)

CSV layout: a header line ``d=<d>,C=<C>`` followed by one row per item holding
``d`` decimal coordinates and the integer class id.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

MAGIC = b"CSET"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class DatasetError(ValueError):
    """Raised for malformed dataset files or invalid dataset contents."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class LabeledEmbedding:
    vector: np.ndarray
    class_id: int


@dataclass(frozen=True, eq=False)
class EmbeddedDataset:
    """An immutable, index-addressable set of labeled embedding vectors.

    ``vectors`` is stored as float32 with shape ``(n, dim)``; ``labels`` as
    int64 with shape ``(n,)``. Item ``i`` is row ``i`` of the source file.
    """

    vectors: np.ndarray
    labels: np.ndarray
    num_classes: int
    dim: int = field(init=False)

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        if vectors.ndim == 1 and vectors.size == 0:
            vectors = vectors.reshape(0, 0)
        if vectors.ndim != 2:
            raise DatasetError(f"vectors must be 2-D, got shape {vectors.shape}")
        if labels.shape != (vectors.shape[0],):
            raise DatasetError(
                f"labels shape {labels.shape} does not match {vectors.shape[0]} vectors"
            )
        if vectors.shape[1] < 1:
            raise DatasetError("dimension must be >= 1")
        if self.num_classes < 1:
            raise DatasetError("num_classes must be >= 1")
        bad = ~np.isfinite(vectors).all(axis=1)
        if bad.any():
            raise DatasetError("non-finite coordinate", row=int(np.argmax(bad)))
        bad = (labels < 0) | (labels >= self.num_classes)
        if bad.any():
            row = int(np.argmax(bad))
            raise DatasetError(
                f"class_id {labels[row]} outside [0, {self.num_classes})", row=row
            )
        vectors.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dim", int(vectors.shape[1]))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __getitem__(self, i: int) -> LabeledEmbedding:
        return LabeledEmbedding(self.vectors[i], int(self.labels[i]))

    def __iter__(self) -> Iterator[LabeledEmbedding]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddedDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.dim == other.dim
            and np.array_equal(self.labels, other.labels)
            and self.vectors.tobytes() == other.vectors.tobytes()
        )

    @property
    def items(self) -> list[LabeledEmbedding]:
        return list(self)

    def class_indices(self, class_id: int) -> np.ndarray:
        """Dataset indices of class ``class_id`` in ascending order."""
        return np.flatnonzero(self.labels == class_id)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices: Sequence[int] | np.ndarray) -> EmbeddedDataset:
        idx = np.asarray(indices, dtype=np.int64)
        return EmbeddedDataset(self.vectors[idx], self.labels[idx], self.num_classes)

    @classmethod
    def from_items(
        cls, items: Sequence[LabeledEmbedding], dim: int, num_classes: int
    ) -> EmbeddedDataset:
        vectors = np.zeros((len(items), dim), dtype=np.float32)
        labels = np.zeros(len(items), dtype=np.int64)
        for row, item in enumerate(items):
            v = np.asarray(item.vector, dtype=np.float32)
            if v.shape != (dim,):
                raise DatasetError(f"expected {dim} coordinates, got {v.size}", row=row)
            vectors[row] = v
            labels[row] = item.class_id
        return cls(vectors, labels, num_classes)


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("binary", "csv"):
            raise ValueError(f"unknown format {fmt!r}")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("vector", "<f4", (dim,)), ("class_id", "<u4")])


def l2_normalize(ds: EmbeddedDataset) -> EmbeddedDataset:
    v = ds.vectors.astype(np.float64)
    norms = np.linalg.norm(v, axis=1)
    zero = norms == 0
    if zero.any():
        raise DatasetError("cannot L2-normalize a zero vector", row=int(np.argmax(zero)))
    return EmbeddedDataset(v / norms[:, None], ds.labels, ds.num_classes)


def load_dataset(
    path: str | Path, format: str | None = None, normalize: bool = False
) -> EmbeddedDataset:
    """Read a dataset file. ``format`` defaults to the file extension (``.csv`` or binary).

    Set ``normalize`` to L2-normalize every vector after loading.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    ds = _load_csv(path) if fmt == "csv" else _load_binary(path)
    return l2_normalize(ds) if normalize else ds


def _load_binary(path: Path) -> EmbeddedDataset:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetError("file too short for header")
    magic, version, n, d, c = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DatasetError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DatasetError(f"unsupported version {version}")
    if d < 1 or c < 1:
        raise DatasetError(f"invalid header d={d}, C={c}")
    dtype = _record_dtype(d)
    body = memoryview(raw)[_HEADER.size:]
    if len(body) != n * dtype.itemsize:
        have = len(body) // dtype.itemsize
        raise DatasetError(
            f"truncated or oversized body: header declares {n} records, found {len(body)} bytes",
            row=min(have, n) if len(body) < n * dtype.itemsize else None,
        )
    records = np.frombuffer(body, dtype=dtype, count=n)
    return EmbeddedDataset(
        records["vector"].astype(np.float32).reshape(n, d),
        records["class_id"].astype(np.int64),
        int(c),
    )


def _load_csv(path: Path) -> EmbeddedDataset:
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        try:
            parts = dict(p.split("=", 1) for p in header.split(","))
            d, c = int(parts["d"]), int(parts["C"])
        except (ValueError, KeyError):
            raise DatasetError(f"malformed header {header!r}, expected 'd=<d>,C=<C>'") from None
        if d < 1 or c < 1:
            raise DatasetError(f"invalid header d={d}, C={c}")
        vectors: list[list[float]] = []
        labels: list[int] = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = len(labels)
            fields = line.split(",")
            if len(fields) != d + 1:
                raise DatasetError(f"expected {d} coordinates, got {len(fields) - 1}", row=row)
            try:
                coords = [float(x) for x in fields[:d]]
                label = int(fields[d])
            except ValueError as exc:
                raise DatasetError(f"unparseable value ({exc})", row=row) from None
            if not all(math.isfinite(x) for x in coords):
                raise DatasetError("non-finite coordinate", row=row)
            if not 0 <= label < c:
                raise DatasetError(f"class_id {label} outside [0, {c})", row=row)
            vectors.append(coords)
            labels.append(label)
    arr = np.asarray(vectors, dtype=np.float32).reshape(len(labels), d)
    return EmbeddedDataset(arr, np.asarray(labels, dtype=np.int64), c)


def save_dataset(ds: EmbeddedDataset, path: str | Path, format: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    # Re-validate in case the arrays were built around the constructor.
    EmbeddedDataset(ds.vectors, ds.labels, ds.num_classes)
    if fmt == "csv":
        lines = [f"d={ds.dim},C={ds.num_classes}"]
        for vec, label in zip(ds.vectors, ds.labels):
            # repr of the float32 value widened to float64 parses back bit-exactly
            lines.append(",".join(repr(float(x)) for x in vec) + f",{int(label)}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return
    records = np.empty(len(ds), dtype=_record_dtype(ds.dim))
    records["vector"] = ds.vectors
    records["class_id"] = ds.labels.astype(np.uint32)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(ds), ds.dim, ds.num_classes))
        fh.write(records.tobytes())


@dataclass(frozen=True)
class SyntheticLayout:
    """A synthetic dataset together with its generating class means and outlier flags."""

    dataset: EmbeddedDataset
    means: np.ndarray
    outlier_mask: np.ndarray


def generate_synthetic_layout(
    num_classes: int,
    per_class: int,
    dim: int,
    spread: float,
    outlier_fraction: float,
    seed: int,
    center_scale: float = 2.0,
    means: np.ndarray | None = None,
) -> SyntheticLayout:
    """Like :func:`generate_synthetic`, also returning the class means and outlier flags.

    Passing ``means`` reuses existing class centres, e.g. to draw a held-out
    set from the same distribution.
    """
    if num_classes < 1 or per_class < 1 or dim < 1:
        raise ValueError("num_classes, per_class and dim must all be >= 1")
    if not spread > 0:
        raise ValueError("spread must be positive")
    if not 0 <= outlier_fraction < 1:
        raise ValueError("outlier_fraction must lie in [0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    if means is None:
        means = rng.normal(0.0, center_scale, size=(num_classes, dim))
    else:
        means = np.asarray(means, dtype=np.float64)
        if means.shape != (num_classes, dim):
            raise ValueError(f"means must have shape {(num_classes, dim)}, got {means.shape}")
    n_out = int(math.floor(outlier_fraction * per_class + 1e-9))
    vectors = np.empty((num_classes * per_class, dim))
    flags = np.zeros(num_classes * per_class, dtype=bool)
    for c in range(num_classes):
        block = means[c] + spread * rng.normal(size=(per_class, dim))
        if n_out:
            where = rng.choice(per_class, size=n_out, replace=False)
            direction = rng.normal(size=(n_out, dim))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            block[where] = means[c] + 5.0 * spread * direction
            flags[c * per_class + where] = True
        vectors[c * per_class:(c + 1) * per_class] = block
    labels = np.repeat(np.arange(num_classes), per_class)
    ds = EmbeddedDataset(vectors, labels, num_classes)
    return SyntheticLayout(ds, means, flags)


def generate_synthetic(
    num_classes: int,
    per_class: int,
    dim: int,
    spread: float,
    outlier_fraction: float,
    seed: int,
    center_scale: float = 2.0,
) -> EmbeddedDataset:
    """Gaussian blobs, one per class, with planted far-out points.

    Class means are drawn from N(0, center_scale^2 I); members from
    N(mean, spread^2 I). ``floor(outlier_fraction * per_class)`` members of each
    class are replaced by points at exactly ``5 * spread`` from the class mean
    in a uniformly random direction. Items are laid out class by class.
    """
    return generate_synthetic_layout(
        num_classes, per_class, dim, spread, outlier_fraction, seed, center_scale
    ).dataset


def stratified_split(
    ds: EmbeddedDataset, fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Split indices per class into (rest, held_out) with ``round(fraction * m)`` held out.

    Both index arrays are sorted so the subsets keep file order.
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5917]))
    held: list[np.ndarray] = []
    for c in range(ds.num_classes):
        idx = ds.class_indices(c)
        k = int(round(fraction * len(idx)))
        held.append(rng.permutation(idx)[:k])
    held_idx = np.sort(np.concatenate(held)) if held else np.zeros(0, dtype=np.int64)
    mask = np.ones(len(ds), dtype=bool)
    mask[held_idx] = False
    return np.flatnonzero(mask), held_idx.astype(np.int64)
