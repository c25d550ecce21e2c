"""Command line entry point: ``coreset-nas {select,search,train,run,sweep,oracle}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline as P
from .coreset import exact_k_center, greedy_k_center, covering_radius, SelectionResult
from .embedding_io import load_dataset, save_dataset
from .supernet import Genotype, bilevel_search, discretize, train_discrete

log = logging.getLogger("coreset_nas")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _add_data_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--embeddings", metavar="PATH", help="dataset file (.csv or binary CSET)")
    src.add_argument("--synthetic", metavar="C,per_class,d,spread,outliers", help="generate Gaussian blobs")
    p.add_argument("--test-embeddings", metavar="PATH", help="held-out set; default splits --embeddings")
    p.add_argument("--normalize", action="store_true", help="L2-normalize embeddings after loading")
    p.add_argument("--config", metavar="PATH", help="YAML or JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--metric", choices=["euclidean", "squared", "cosine"])
    p.add_argument("--out", metavar="DIR", help="output directory")


def _add_selection_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ratio", type=float)
    p.add_argument("--method", choices=list(P.METHODS))


def _config(args) -> P.PipelineConfig:
    cfg = P.PipelineConfig()
    if args.config:
        cfg = P.config_from_dict(P.load_config_file(args.config), cfg)
    over: dict = {}
    if args.embeddings:
        over.update(embeddings=args.embeddings, synthetic=None)
    if args.synthetic:
        spec = P.SyntheticSpec.parse(args.synthetic)
        if cfg.synthetic is not None:
            spec = dataclasses.replace(cfg.synthetic, **{
                k: getattr(spec, k) for k in ("num_classes", "per_class", "dim", "spread", "outlier_fraction")
            })
        over.update(synthetic=spec, embeddings=None)
    if getattr(args, "test_embeddings", None):
        over["test_embeddings"] = args.test_embeddings
    if args.normalize:
        over["normalize"] = True
    for key in ("seed", "metric", "ratio", "method"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    return dataclasses.replace(cfg, **over)


def _out(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(doc, path: Path | None) -> None:
    text = json.dumps(doc, indent=2)
    if path is not None:
        path.write_text(text + "\n", encoding="utf-8")
    print(text)


def cmd_select(args) -> int:
    cfg = _config(args)
    train, _ = P.load_data(cfg)
    t0 = time.perf_counter()
    sel = P.select(train, cfg)
    elapsed = time.perf_counter() - t0
    out = _out(args)
    if out is not None:
        sel.save(out / "selection.json")
        save_dataset(train.subset(sel.indices()), out / "subset.cset")
    print(json.dumps({"method": sel.method, "ratio": sel.ratio, "counts": sel.counts(),
                      "max_covering_radius": P.selection_covering_radius(sel), "time_s": elapsed}, indent=2))
    return 0


def cmd_search(args) -> int:
    cfg = _config(args)
    train, _ = P.load_data(cfg)
    if args.selection:
        sel = SelectionResult.load(args.selection)
    else:
        sel = P.select(train, cfg)
    subset = train.subset(sel.indices())
    w_split, a_split = P.split_search_subset(subset, cfg.seed)
    search_cfg = dataclasses.replace(cfg.search, seed=cfg.seed)
    t0 = time.perf_counter()
    state, history = bilevel_search(w_split, a_split, search_cfg)
    geno = discretize(state)
    elapsed = time.perf_counter() - t0
    out = _out(args)
    if out is not None:
        geno.save(out / "genotype.json")
        (out / "search.json").write_text(json.dumps({"history": history.to_dict(), "time_s": elapsed}, indent=2) + "\n")
    print(json.dumps({"genotype": geno.to_dict(), "final": history.to_dict()[-1], "time_s": elapsed}, indent=2))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    train, test = P.load_data(cfg)
    geno = Genotype.load(args.genotype)
    res = train_discrete(geno, train, test, dataclasses.replace(cfg.train, seed=cfg.seed))
    out = _out(args)
    _dump(res.metrics, out / "train.json" if out else None)
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.out:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    rep = P.run_pipeline(cfg)
    summary = {k: rep[k] for k in ("run_hash", "method", "ratio", "seed", "total_time_s")}
    summary.update(top1=rep["train"]["top1"], top5=rep["train"]["top5"], genotype=rep["genotype"])
    print(json.dumps(summary, indent=2))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    ratios = _floats(args.ratios) if args.ratios else [cfg.ratio]
    methods = args.methods.split(",") if args.methods else [cfg.method]
    seeds = _ints(args.seeds) if args.seeds else [cfg.seed]
    res = P.sweep(cfg, ratios, methods, seeds, workers=args.workers, out_dir=args.out)
    print(P.format_table(res["table"]))
    failures = [r for r in res["rows"] if r.get("error")]
    for r in failures:
        print(f"failed: {r['method']} r={r['ratio']} seed={r['seed']}: {r['error']}", file=sys.stderr)
    # a partial grid is still written out, but the caller should notice it
    return 1 if failures else 0


def cmd_oracle(args) -> int:
    if args.points_file:
        pts = load_dataset(args.points_file).vectors.astype(np.float64)
    else:
        pts = np.array([[float(v) for v in p.split(",")] for p in args.points.split(";")])
    metric = {"squared": "squared_euclidean", "cosine": "cosine_distance"}.get(args.metric, args.metric)
    centers, radius = exact_k_center(pts, args.k, metric)
    greedy = [args.first] + greedy_k_center(pts, [args.first], args.k - 1, metric)
    g_radius = covering_radius(pts, greedy, metric)
    print(json.dumps({"exact": {"centers": centers, "radius": radius},
                      "greedy": {"centers": greedy, "radius": g_radius},
                      "ratio": g_radius / radius if radius > 0 else 1.0}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coreset-nas", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="curate a search subset")
    _add_data_args(p)
    _add_selection_args(p)
    p.set_defaults(fn=cmd_select, stage="select")

    p = sub.add_parser("search", help="bi-level search on a selected subset")
    _add_data_args(p)
    _add_selection_args(p)
    p.add_argument("--selection", metavar="PATH", help="selection.json from `select`")
    p.set_defaults(fn=cmd_search, stage="search")

    p = sub.add_parser("train", help="train a genotype on the full training set")
    _add_data_args(p)
    p.add_argument("--genotype", metavar="PATH", required=True)
    p.set_defaults(fn=cmd_train, stage="train")

    p = sub.add_parser("run", help="select, search and train end to end")
    _add_data_args(p)
    _add_selection_args(p)
    p.set_defaults(fn=cmd_run, stage="run")

    p = sub.add_parser("sweep", help="method x ratio x seed grid")
    _add_data_args(p)
    p.add_argument("--ratios", help="comma-separated, e.g. 0.02,0.05,0.1")
    p.add_argument("--methods", help="comma-separated subset of coreset,random,full")
    p.add_argument("--seeds", help="comma-separated integers")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_sweep, stage="sweep")

    p = sub.add_parser("oracle", help="exact vs greedy k-center on a tiny instance")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--points", help="';'-separated points, coordinates ','-separated: '0;1;10'")
    src.add_argument("--points-file", metavar="PATH")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--first", type=int, default=0, help="initial greedy center")
    p.add_argument("--metric", choices=["euclidean", "squared", "cosine"], default="euclidean")
    p.set_defaults(fn=cmd_oracle, stage="oracle")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except P.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: [{args.stage}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
