"""Command-line entry point: ``echodistill <subcommand> [options]``.

Logs go to stderr; data goes to files under ``--out`` or to stdout.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .dot import export_dot
from .errors import ClassTooSmallError, ConfigError, EchoDistillError
from .evaluation import aggregate_runs, evaluate, load_predictions
from .feature_store import load_csv_manifest, load_manifest, parse_bounds, save_manifest
from .graph_builder import build_class_graph, load_graph, save_graph
from .infomap import detect_communities
from .pipeline import (
    DISTILLED_NAME,
    PipelineConfig,
    Staging,
    class_seed,
    distilled_from,
    load_config,
    process_classes,
    run_pipeline,
    write_centrality,
    write_communities,
)
from .selector import emit_distilled_manifest
from .synthetic import SyntheticSpec, generate_synthetic, planted_labels

log = logging.getLogger("echodistill")


def _knn(value: str):
    if value.lower() in ("complete", "none", "all"):
        return "complete"
    try:
        k = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'complete', got {value!r}") from None
    if k < 1:
        raise argparse.ArgumentTypeError("knn must be >= 1")
    return k


def _sigma(value: str):
    if value == "median":
        return value
    try:
        s = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'median' or a positive number, got {value!r}") from None
    if not s > 0:
        raise argparse.ArgumentTypeError("sigma must be positive")
    return s


def _common(p: argparse.ArgumentParser, out_default: str | None = None) -> None:
    # default=None everywhere so config-file values are only overridden by explicit flags
    p.add_argument("--config", help="key=value config file; flags take precedence")
    p.add_argument("--manifest", help="manifest file (binary index, or CSV with --csv)")
    p.add_argument("--csv", action="store_const", const=True, default=None,
                   help="manifest is the all-in-one video_id,ef,split,f_0.. CSV layout")
    p.add_argument("--dim", type=int, help="expected feature dimension")
    p.add_argument("--bounds", help="class intervals, e.g. '[0,30),[30,40),[40,50),[50,70],(70,100]'")
    p.add_argument("--vpc", type=int, help="videos per class to select (default 5)")
    p.add_argument("--seed", type=int, help="seed for community detection (default 0)")
    p.add_argument("--knn", type=_knn, help="k for the symmetrized k-NN graph, or 'complete' (default 10)")
    p.add_argument("--sigma", type=_sigma, help="kernel bandwidth: 'median' (default) or a positive number")
    p.add_argument("--raw-distance-weights", action="store_const", const=True, default=None,
                   help="use Euclidean distances themselves as edge weights")
    p.add_argument("--alloc", choices=("equal", "proportional"), help="per-community allocation (default equal)")
    p.add_argument("--trials", type=int, help="independent detection trials per class (default 1)")
    p.add_argument("--tolerance", type=float, help="soft-metric tolerance in EF points (default 2)")
    p.add_argument("--jobs", type=int, help="worker processes for per-class work (default 1)")
    p.add_argument("--out", default=out_default, help="output directory")


def _config(args) -> PipelineConfig:
    overrides = {
        name: getattr(args, name, None)
        for name in ("manifest", "csv", "dim", "bounds", "vpc", "seed", "knn", "sigma", "raw_distance_weights",
                     "alloc", "trials", "tolerance", "jobs", "out")
    }
    knn = overrides.pop("knn")
    cfg = load_config(args.config, **overrides)
    if knn is not None:
        cfg.knn = None if knn == "complete" else knn
    if cfg.seed < 0:
        raise ConfigError("seed must be >= 0")
    return cfg.validate()


def _out(cfg: PipelineConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _graphs(cfg: PipelineConfig, manifest, graph_dir: str | None):
    """Per-class graphs, read from a cache directory when given."""
    out = {}
    for c in range(manifest.class_count):
        cached = Path(graph_dir) / f"graph_class{c}.jsonl" if graph_dir else None
        if cached is not None and cached.is_file():
            out[c] = load_graph(cached)
            continue
        try:
            out[c] = build_class_graph(manifest, c, knn=cfg.knn, sigma=cfg.sigma,
                                       raw_distance_weights=cfg.raw_distance_weights)
        except ClassTooSmallError as exc:
            log.warning("%s; skipped", exc)
    return out


def cmd_ingest(args) -> int:
    bounds = parse_bounds(args.bounds) if args.bounds else None
    kw = {"bounds": bounds} if bounds else {}
    loader = load_csv_manifest if args.csv else load_manifest
    manifest = loader(args.input, dim=args.dim, **kw)
    out = Path(args.out)
    path = save_manifest(manifest, out / "manifest.txt")
    json.dump({"manifest": str(path), "records": len(manifest), "dim": manifest.dim,
               "class_counts": manifest.class_counts()}, sys.stdout, indent=2)
    print()
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(classes=args.classes, clusters=args.clusters, points_per_cluster=args.points,
                         dim=args.dim, sigma=args.blob_sigma, separation=args.separation, seed=args.seed)
    manifest = generate_synthetic(spec)
    out = Path(args.out)
    with Staging(out) as stage:
        save_manifest(manifest, stage / "manifest.txt", feature_file="features.f32")
        with open(stage / "planted.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("video_id", "class_label", "cluster"))
            ids = [r.video_id for r in manifest.records]
            w.writerows(zip(ids, (r.class_label for r in manifest.records), planted_labels(ids)))
    log.info("wrote %d synthetic records to %s", len(manifest), out / "manifest.txt")
    print(out / "manifest.txt")
    return 0


def cmd_build_graph(args) -> int:
    cfg = _config(args)
    manifest = cfg.load()
    out = _out(cfg)
    for c, g in _graphs(cfg, manifest, None).items():
        save_graph(g, out / f"graph_class{c}.jsonl")
        log.info("class %d: %d nodes, %d edges", c, g.n_nodes, g.n_edges)
    return 0


def cmd_detect(args) -> int:
    cfg = _config(args)
    manifest = cfg.load()
    out = _out(cfg)
    summary = {}
    for c, g in _graphs(cfg, manifest, args.graph_dir).items():
        part = detect_communities(g, seed=class_seed(cfg.seed, c), trials=cfg.trials)
        with open(out / f"communities_class{c}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("video_id", "module_id"))
            w.writerows(zip(g.node_ids, part.assignment))
        summary[str(c)] = {"codelength": part.codelength, "modules": part.n_modules, "sweeps": part.sweeps}
    with open(out / "detect_summary.json", "w") as fh:
        json.dump({"seed": cfg.seed, "classes": summary}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_centrality(args) -> int:
    cfg = _config(args)
    manifest = cfg.load()
    out = _out(cfg)
    for r in process_classes(manifest, cfg):
        write_centrality(r, out / f"centrality_class{r.class_label}.csv")
        write_communities(r, out / f"communities_class{r.class_label}.csv")
    return 0


def cmd_select(args) -> int:
    cfg = _config(args)
    manifest = cfg.load()
    results = process_classes(manifest, cfg)
    distilled = distilled_from(results, cfg)
    with Staging(cfg.out) as stage:
        emit_distilled_manifest(distilled, manifest, stage / DISTILLED_NAME)
    print(Path(cfg.out) / DISTILLED_NAME)
    return 0


def cmd_export_dot(args) -> int:
    cfg = _config(args)
    manifest = cfg.load()
    out = _out(cfg)
    ef = {r.video_id: r.ef for r in manifest.records}
    for c, g in _graphs(cfg, manifest, args.graph_dir).items():
        part = detect_communities(g, seed=class_seed(cfg.seed, c), trials=cfg.trials)
        export_dot(g, part, out / f"class{c}.dot", ef)
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    distilled, report = run_pipeline(cfg)
    log.info("selected %d videos into %s", len(distilled), Path(cfg.out) / DISTILLED_NAME)
    json.dump({"total_selected": report["total_selected"], "warnings": report["warnings"]}, sys.stdout, indent=2)
    print()
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    bounds = cfg.class_bounds
    known = {r.video_id for r in cfg.load().records} if cfg.manifest else None
    runs = []
    for path in args.predictions:
        preds = load_predictions(path)
        if known is not None:
            missing = [p.video_id for p in preds if p.video_id not in known]
            if missing:
                raise ConfigError(f"{path}: {len(missing)} video id(s) not in the manifest, e.g. {missing[0]!r}")
        runs.append(evaluate(preds, bounds, cfg.tolerance))
    result = dict(runs[0]) if len(runs) == 1 else {
        "tolerance": cfg.tolerance,
        "n": [r["n"] for r in runs],
        "hard_acc": aggregate_runs([r["hard_acc"] for r in runs]).to_dict(),
        "soft_acc": aggregate_runs([r["soft_acc"] for r in runs]).to_dict(),
        "warnings": [w for r in runs for w in r["warnings"]],
    }
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="echodistill", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a manifest and rewrite it in the binary-index layout")
    p.add_argument("input")
    p.add_argument("--csv", action="store_true")
    p.add_argument("--dim", type=int)
    p.add_argument("--bounds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a planted-cluster synthetic dataset")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--points", type=int, default=30, help="points per cluster")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--blob-sigma", type=float, default=1.0)
    p.add_argument("--separation", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (
        ("build-graph", cmd_build_graph, "write per-class graph caches (JSON lines)"),
        ("detect", cmd_detect, "write per-class community assignments"),
        ("centrality", cmd_centrality, "write per-class modular centrality tables"),
        ("select", cmd_select, "write the distilled manifest"),
        ("export-dot", cmd_export_dot, "write per-class Graphviz files"),
        ("run", cmd_run, "full pipeline"),
    ):
        p = sub.add_parser(name, help=helptext)
        _common(p, "out")
        if name in ("detect", "export-dot"):
            p.add_argument("--graph-dir", help="read graph_class<c>.jsonl caches from here")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="hard and soft accuracy of EF predictions")
    _common(p)
    p.add_argument("predictions", nargs="+", help="video_id,true_ef,predicted_ef CSV; several files = repeated runs")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EchoDistillError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
