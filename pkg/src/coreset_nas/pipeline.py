"""End-to-end runs: curate a search subset, search on it, train the result on all data.

A run writes ``run.json`` and ``genotype.json`` into its output directory.
Sweeps lay runs out under ``<out>/runs/<config hash>/`` and skip any cell
whose ``run.json`` already exists.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .coreset import CoresetConfig, SelectionResult, full_select, random_select, select_coreset
from .embedding_io import EmbeddedDataset, generate_synthetic_layout, load_dataset, stratified_split
from .metrics import DistanceMetric
from .supernet import Genotype, SearchConfig, TrainConfig, bilevel_search, discretize, train_discrete

log = logging.getLogger(__name__)

METHODS = ("coreset", "random", "full")
SWEEP_COLUMNS = ("method", "ratio", "seed", "top1", "top5", "select_s", "search_s")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    per_class: int = 100
    dim: int = 8
    spread: float = 1.0
    outlier_fraction: float = 0.2
    center_scale: float = 2.0
    test_per_class: int = 50
    seed: int = 0

    @classmethod
    def parse(cls, text: str) -> SyntheticSpec:
        """Parse ``"C,per_class,d,spread,outliers"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 5:
            raise ValueError(f"expected 'C,per_class,d,spread,outliers', got {text!r}")
        c, per, d = (int(p) for p in parts[:3])
        return cls(num_classes=c, per_class=per, dim=d, spread=float(parts[3]), outlier_fraction=float(parts[4]))

    def build(self) -> tuple[EmbeddedDataset, EmbeddedDataset]:
        args = (self.num_classes, self.per_class, self.dim, self.spread, self.outlier_fraction)
        train = generate_synthetic_layout(*args, seed=self.seed, center_scale=self.center_scale)
        test = generate_synthetic_layout(
            self.num_classes, self.test_per_class, self.dim, self.spread, self.outlier_fraction,
            seed=self.seed + 1, means=train.means,
        )
        return train.dataset, test.dataset


@dataclass(frozen=True)
class PipelineConfig:
    embeddings: str | None = None
    test_embeddings: str | None = None
    synthetic: SyntheticSpec | None = None
    normalize: bool = False
    test_fraction: float = 0.2
    method: str = "coreset"
    ratio: float = 0.1
    seed_set_size: int = 1
    metric: DistanceMetric = DistanceMetric.EUCLIDEAN
    seed: int = 0
    search: SearchConfig = field(default_factory=SearchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.embeddings is None and self.synthetic is None:
            object.__setattr__(self, "synthetic", SyntheticSpec())
        object.__setattr__(self, "metric", DistanceMetric.parse(self.metric))
        if not 0 < self.ratio <= 1:
            raise ValueError(f"ratio must lie in (0, 1], got {self.ratio}")

    @property
    def effective_ratio(self) -> float:
        return 1.0 if self.method == "full" else self.ratio

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["metric"] = self.metric.value
        doc["ratio"] = self.effective_ratio
        doc["search"]["mode"] = self.search.mode.value
        doc["search"]["op_set"] = [o.value for o in self.search.op_set]
        doc["search"]["arch_betas"] = list(self.search.arch_betas)
        return doc

    def run_hash(self) -> str:
        doc = self.to_dict()
        doc.pop("out_dir")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_data(cfg: PipelineConfig) -> tuple[EmbeddedDataset, EmbeddedDataset]:
    if cfg.embeddings is None:
        return cfg.synthetic.build()
    full = load_dataset(cfg.embeddings, normalize=cfg.normalize)
    if cfg.test_embeddings is not None:
        return full, load_dataset(cfg.test_embeddings, normalize=cfg.normalize)
    rest, held = stratified_split(full, cfg.test_fraction, cfg.seed)
    return full.subset(rest), full.subset(held)


def select(train: EmbeddedDataset, cfg: PipelineConfig) -> SelectionResult:
    if cfg.method == "full":
        return full_select(train)
    if cfg.method == "random":
        return random_select(train, cfg.ratio, cfg.seed, cfg.metric)
    return select_coreset(train, CoresetConfig(cfg.ratio, cfg.seed, cfg.seed_set_size, cfg.metric))


def split_search_subset(subset: EmbeddedDataset, seed: int) -> tuple[EmbeddedDataset, EmbeddedDataset]:
    """Per-class halves: weights train on the first, architecture logits on the second."""
    w_idx, a_idx = stratified_split(subset, 0.5, seed)
    if len(a_idx) == 0 or len(w_idx) == 0:
        raise ValueError(f"search subset of {len(subset)} items is too small to split")
    return subset.subset(w_idx), subset.subset(a_idx)


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage label
        raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc


def _write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Select, search, discretize, then train on the full training set; returns the run report."""
    seed = cfg.seed
    search_cfg = dataclasses.replace(cfg.search, seed=seed)
    train_cfg = dataclasses.replace(cfg.train, seed=seed)
    train, test = _stage("data", load_data, cfg)

    t0 = time.perf_counter()
    selection = _stage("select", select, train, cfg)
    select_s = time.perf_counter() - t0

    subset = train.subset(selection.indices())
    w_split, a_split = _stage("search", split_search_subset, subset, seed)
    t0 = time.perf_counter()
    state, history = _stage("search", bilevel_search, w_split, a_split, search_cfg)
    genotype = _stage("search", discretize, state)
    search_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    trained = _stage("train", train_discrete, genotype, train, test, train_cfg)
    train_s = time.perf_counter() - t0

    m = trained.metrics
    report = {
        "run_hash": cfg.run_hash(),
        "method": cfg.method,
        "ratio": cfg.effective_ratio,
        "seed": seed,
        "selection": {
            "counts": {str(c): n for c, n in selection.counts().items()},
            "covering_radius": {str(c): r for c, r in selection.objective_per_class.items()},
            "subset_size": len(subset),
            "time_s": select_s,
        },
        "search": {
            "epochs": search_cfg.epochs,
            "warmup_epochs": search_cfg.warmup_epochs,
            "mode": search_cfg.mode.value,
            "train_size": len(w_split),
            "val_size": len(a_split),
            "history": history.to_dict(),
            "time_s": search_s,
        },
        "genotype": genotype.to_dict(),
        "train": {
            "train_size": len(train),
            "test_size": len(test),
            "top1": m["top1"],
            "top5": m.get("top5"),
            "test_loss": m["test_loss"],
            "train_loss": m["train_loss"],
            "time_s": train_s,
        },
        "total_time_s": select_s + search_s,
        "config": cfg.to_dict(),
    }
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            _write_json(out / "run.json", report)
            genotype.save(out / "genotype.json")
            selection.save(out / "selection.json")
        except OSError as exc:
            raise PipelineError("report", str(exc)) from exc
    return report


# ---------------------------------------------------------------- config files

_SEARCH_KEYS = {f.name for f in dataclasses.fields(SearchConfig)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_PIPELINE_KEYS = {f.name for f in dataclasses.fields(PipelineConfig)} - {"search", "train", "synthetic"}
_SYNTH_KEYS = {f.name for f in dataclasses.fields(SyntheticSpec)}


def load_config_file(path: str | Path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ValueError(f"config {path} must be a mapping")
    return doc


def config_from_dict(doc: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    """Build a config from a mapping.

    Top-level search/train keys (``epochs``, ``lr_w``, ...) apply to both
    stages where the stage has that field; ``search:`` and ``train:``
    sections override them per stage. ``synthetic:`` holds generator fields.
    """
    base = base or PipelineConfig()
    doc = dict(doc)
    search_over: dict = {}
    train_over: dict = {}
    top: dict = {}
    for key in list(doc):
        if key in ("search", "train", "synthetic"):
            continue
        val = doc.pop(key)
        matched = False
        if key in _PIPELINE_KEYS:
            top[key] = val
            matched = True
        if key in _SEARCH_KEYS and key != "seed":
            search_over[key] = val
            matched = True
        if key in _TRAIN_KEYS and key != "seed":
            train_over[key] = val
            matched = True
        if not matched:
            raise ValueError(f"unknown config key {key!r}")
    for section, keys, target in (("search", _SEARCH_KEYS, search_over), ("train", _TRAIN_KEYS, train_over)):
        sub = doc.get(section) or {}
        unknown = set(sub) - keys
        if unknown:
            raise ValueError(f"unknown {section} keys: {sorted(unknown)}")
        target.update(sub)
    if "arch_betas" in search_over:
        search_over["arch_betas"] = tuple(search_over["arch_betas"])
    if "op_set" in search_over:
        search_over["op_set"] = tuple(search_over["op_set"])
    synthetic = base.synthetic
    if doc.get("synthetic"):
        unknown = set(doc["synthetic"]) - _SYNTH_KEYS
        if unknown:
            raise ValueError(f"unknown synthetic keys: {sorted(unknown)}")
        synthetic = dataclasses.replace(synthetic or SyntheticSpec(), **doc["synthetic"])
    return dataclasses.replace(
        base,
        search=dataclasses.replace(base.search, **search_over),
        train=dataclasses.replace(base.train, **train_over),
        synthetic=synthetic,
        **top,
    )


# ---------------------------------------------------------------- sweeps


def _cell_config(template: PipelineConfig, method: str, ratio: float, seed: int, out: Path | None) -> PipelineConfig:
    cfg = dataclasses.replace(template, method=method, ratio=1.0 if method == "full" else ratio, seed=seed, out_dir=None)
    if out is not None:
        cfg = dataclasses.replace(cfg, out_dir=str(out / "runs" / cfg.run_hash()))
    return cfg


def _run_cell(cfg: PipelineConfig) -> dict:
    if cfg.out_dir is not None:
        existing = Path(cfg.out_dir) / "run.json"
        if existing.exists():
            return json.loads(existing.read_text(encoding="utf-8"))
    try:
        return run_pipeline(cfg)
    except Exception as exc:  # noqa: BLE001 - recorded per cell, sweep continues
        return {"method": cfg.method, "ratio": cfg.effective_ratio, "seed": cfg.seed, "error": str(exc)}


def sweep_row(report: dict) -> dict:
    if "error" in report:
        return {"method": report["method"], "ratio": report["ratio"], "seed": report["seed"],
                "top1": None, "top5": None, "select_s": None, "search_s": None, "error": report["error"]}
    return {
        "method": report["method"],
        "ratio": report["ratio"],
        "seed": report["seed"],
        "top1": report["train"]["top1"],
        "top5": report["train"]["top5"],
        "select_s": report["selection"]["time_s"],
        "search_s": report["search"]["time_s"],
    }


def _mean_sd(xs: list[float]) -> tuple[float, float]:
    if not xs:
        return math.nan, math.nan
    return statistics.fmean(xs), statistics.stdev(xs) if len(xs) > 1 else 0.0


def summarize(rows: Sequence[dict]) -> list[dict]:
    """One entry per (method, ratio): mean and sd of accuracies plus mean timings."""
    groups: dict[tuple[str, float], list[dict]] = {}
    for r in rows:
        groups.setdefault((r["method"], r["ratio"]), []).append(r)
    table = []
    order = {m: i for i, m in enumerate(METHODS)}
    for (method, ratio), rs in sorted(groups.items(), key=lambda kv: (order.get(kv[0][0], 99), kv[0][1])):
        ok = [r for r in rs if r.get("error") is None]
        top1 = _mean_sd([r["top1"] for r in ok])
        top5 = _mean_sd([r["top5"] for r in ok if r["top5"] is not None])
        table.append({
            "method": method,
            "ratio": ratio,
            "runs": len(ok),
            "failures": len(rs) - len(ok),
            "top1_mean": top1[0],
            "top1_sd": top1[1],
            "top5_mean": top5[0],
            "top5_sd": top5[1],
            "select_s_mean": _mean_sd([r["select_s"] for r in ok])[0],
            "search_s_mean": _mean_sd([r["search_s"] for r in ok])[0],
        })
    return table


def format_table(table: Sequence[dict]) -> str:
    lines = [f"{'method':<8} {'ratio':>6} {'runs':>4} {'top1':>15} {'top5':>15} {'select_s':>9} {'search_s':>9}"]
    def acc(mean, sd):
        return f"{'-':>15}" if math.isnan(mean) else f"{100 * mean:>8.2f}±{100 * sd:<6.2f}"

    for t in table:
        lines.append(
            f"{t['method']:<8} {t['ratio']:>6.2f} {t['runs']:>4d} "
            f"{acc(t['top1_mean'], t['top1_sd'])} {acc(t['top5_mean'], t['top5_sd'])} "
            f"{t['select_s_mean']:>9.3f} {t['search_s_mean']:>9.3f}"
        )
    return "\n".join(lines)


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r[k]) for k in SWEEP_COLUMNS})
    return buf.getvalue()


def sweep(
    template: PipelineConfig,
    ratios: Sequence[float],
    methods: Sequence[str],
    seeds: Sequence[int],
    workers: int = 1,
    out_dir: str | Path | None = None,
) -> dict:
    """Run the method x ratio x seed grid; ``full`` runs once per seed regardless of ratios.

    Returns ``{"rows": [...], "table": [...], "reports": [...]}`` and, with
    ``out_dir``, writes ``sweep.csv``, ``summary.json`` and ``summary.txt``.
    """
    if not ratios or not methods or not seeds:
        raise ValueError("ratios, methods and seeds must all be non-empty")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    out = Path(out_dir) if out_dir is not None else None
    cells: list[PipelineConfig] = []
    seen: set[tuple] = set()
    for method in methods:
        for ratio in ratios:
            for seed in seeds:
                key = (method, 1.0 if method == "full" else float(ratio), seed)
                if key in seen:
                    continue
                seen.add(key)
                cells.append(_cell_config(template, method, float(ratio), int(seed), out))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_cell, cells))
    else:
        reports = [_run_cell(c) for c in cells]
    for rep in reports:
        if "error" in rep:
            log.warning("sweep cell %s/%s/%s failed: %s", rep["method"], rep["ratio"], rep["seed"], rep["error"])
    rows = [sweep_row(r) for r in reports]
    table = summarize(rows)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(rows_to_csv(rows), encoding="utf-8")
        _write_json(out / "summary.json", {"rows": rows, "table": table})
        (out / "summary.txt").write_text(format_table(table) + "\n", encoding="utf-8")
    return {"rows": rows, "table": table, "reports": reports}


def selection_covering_radius(selection: SelectionResult) -> float:
    return max(selection.objective_per_class.values()) if selection.objective_per_class else math.nan


def search_subset_sizes(cfg: PipelineConfig) -> np.ndarray:
    """Per-class search-set sizes the config would produce, without running the search."""
    train, _ = load_data(cfg)
    return np.array([len(v) for v in select(train, cfg).per_class_selected.values()])
