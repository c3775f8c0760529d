"""Per-class distillation pipeline and its configuration."""
from __future__ import annotations

import csv
import json
import logging
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .centrality import CentralityTable, modular_centrality
from .errors import ClassTooSmallError, ConfigError, EchoDistillError
from .feature_store import DEFAULT_BOUNDS, DatasetManifest, format_bounds, load_csv_manifest, load_manifest, parse_bounds
from .graph_builder import DEFAULT_KNN, ClassGraph, build_class_graph
from .infomap import DEFAULT_TRIALS, Partition, detect_communities
from .selector import ClassSelection, DistilledManifest, emit_distilled_manifest, select_all, select_representatives

log = logging.getLogger(__name__)

DISTILLED_NAME = "distilled.manifest"


@dataclass
class PipelineConfig:
    manifest: str | None = None
    csv: bool = False
    vpc: int = 5
    seed: int = 0
    knn: int | None = DEFAULT_KNN      # None: complete graph
    sigma: str | float = "median"
    raw_distance_weights: bool = False
    alloc: str = "equal"
    tolerance: float = 2.0
    bounds: str = format_bounds(DEFAULT_BOUNDS)
    dim: int | None = None
    trials: int = DEFAULT_TRIALS
    jobs: int = 1
    out: str = "out"

    def validate(self) -> "PipelineConfig":
        if self.vpc < 1:
            raise ConfigError(f"vpc must be >= 1, got {self.vpc}")
        if self.tolerance < 0:
            raise ConfigError(f"tolerance must be >= 0, got {self.tolerance}")
        if self.knn is not None and self.knn < 1:
            raise ConfigError(f"knn must be >= 1 or 'complete', got {self.knn}")
        if self.alloc not in ("equal", "proportional"):
            raise ConfigError(f"alloc must be equal or proportional, got {self.alloc!r}")
        if self.jobs < 1 or self.trials < 1:
            raise ConfigError("jobs and trials must be >= 1")
        if self.sigma != "median" and not float(self.sigma) > 0:
            raise ConfigError(f"sigma must be 'median' or a positive number, got {self.sigma!r}")
        parse_bounds(self.bounds)
        if self.manifest is not None and not Path(self.manifest).is_file():
            raise ConfigError(f"manifest {self.manifest} does not exist")
        return self

    @property
    def class_bounds(self):
        return parse_bounds(self.bounds)

    def load(self) -> DatasetManifest:
        if self.manifest is None:
            raise ConfigError("no manifest given")
        loader = load_csv_manifest if self.csv else load_manifest
        return loader(self.manifest, self.class_bounds, self.dim)


def _coerce(name: str, value: str):
    value = value.strip()
    if name in ("vpc", "seed", "jobs", "trials"):
        return int(value)
    if name == "dim":
        return None if value.lower() in ("", "none") else int(value)
    if name == "knn":
        return None if value.lower() in ("complete", "none", "all") else int(value)
    if name == "tolerance":
        return float(value)
    if name == "sigma":
        return value if value == "median" else float(value)
    if name in ("csv", "raw_distance_weights"):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(value)
    return value


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key=value`` lines (``#`` comments, dashes or underscores in keys)."""
    known = {f.name for f in fields(PipelineConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown or malformed setting {raw.strip()!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value.strip()!r}") from None
    return out


def load_config(path=None, **overrides) -> PipelineConfig:
    """Defaults, then the config file, then non-None ``overrides``."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text, str(path)))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)


@dataclass
class ClassResult:
    class_label: int
    selection: ClassSelection
    graph: ClassGraph | None = None
    partition: Partition | None = None
    centrality: CentralityTable | None = None
    size: int = 0

    def summary(self) -> dict:
        out = {"videos": self.size, "picks": self.selection.video_ids, "warnings": self.selection.warnings}
        if self.partition is not None:
            out.update(
                codelength=self.partition.codelength,
                modules=self.partition.n_modules,
                sweeps=self.partition.sweeps,
                edges=self.graph.n_edges,
            )
        return out


def process_class(manifest: DatasetManifest, class_label: int, config: PipelineConfig) -> ClassResult:
    """Graph, communities, centrality and selection for one class."""
    members = manifest.class_members(class_label)
    try:
        graph = build_class_graph(manifest, class_label, knn=config.knn, sigma=config.sigma,
                                  raw_distance_weights=config.raw_distance_weights)
    except ClassTooSmallError:
        log.warning("class %d has %d video(s); selecting all", class_label, len(members))
        return ClassResult(class_label, select_all(manifest, class_label), size=len(members))
    # seeding by (seed, class) keeps a class's result independent of the others
    partition = detect_communities(graph, seed=class_seed(config.seed, class_label), trials=config.trials)
    table = modular_centrality(graph, partition)
    selection = select_representatives(graph, partition, table, config.vpc, config.alloc)
    log.info("class %d: %d videos, %d modules, L=%.6f bits, %d picked", class_label, graph.n_nodes,
             partition.n_modules, partition.codelength, len(selection.picks))
    return ClassResult(class_label, selection, graph, partition, table, len(members))


def class_seed(seed: int, class_label: int) -> int:
    return seed * 1000003 + class_label


def _run_one(args):
    manifest, label, config = args
    try:
        return process_class(manifest, label, config)
    except EchoDistillError as exc:
        raise type(exc)(f"class {label}: {exc}") from exc


def process_classes(manifest: DatasetManifest, config: PipelineConfig) -> list[ClassResult]:
    labels = range(manifest.class_count)
    tasks = [(manifest, c, config) for c in labels]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            return list(pool.map(_run_one, tasks))
    return [_run_one(t) for t in tasks]


def write_communities(result: ClassResult, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("video_id", "module_id"))
        if result.partition is None:
            w.writerows((v, 0) for v in result.selection.video_ids)
        else:
            w.writerows(zip(result.graph.node_ids, result.partition.assignment))


def write_centrality(result: ClassResult, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("video_id", "module_id", "local", "global", "combined"))
        if result.partition is None:
            w.writerows((v, 0, 0.0, 0.0, 0.0) for v in result.selection.video_ids)
            return
        for vid, m, (loc, glo, comb) in zip(result.graph.node_ids, result.partition.assignment,
                                            result.centrality.rows()):
            w.writerow((vid, m, repr(loc), repr(glo), repr(comb)))


def distilled_from(results: list[ClassResult], config: PipelineConfig) -> DistilledManifest:
    return DistilledManifest(
        {r.class_label: r.selection for r in results},
        vpc=config.vpc,
        seed=config.seed,
        alloc=config.alloc,
        extra={
            "codelengths": {str(r.class_label): r.partition.codelength for r in results if r.partition},
            "graph": {"knn": config.knn if config.knn is not None else "complete", "sigma": config.sigma,
                      "raw_distance_weights": config.raw_distance_weights},
            "trials": config.trials,
            "bounds": config.bounds,
        },
    )


class Staging:
    """Directory beside ``out`` whose files are moved into ``out`` on success.

    Staging at the same depth as ``out`` keeps relative feature paths valid.
    """

    def __init__(self, out):
        self.out = Path(out)

    def __enter__(self) -> Path:
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.dir = Path(tempfile.mkdtemp(prefix=f".{self.out.name}.staging-", dir=self.out.parent))
        return self.dir

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self.out.mkdir(parents=True, exist_ok=True)
                for item in sorted(self.dir.iterdir()):
                    target = self.out / item.name
                    if target.is_dir():
                        shutil.rmtree(target)
                    item.replace(target)
        finally:
            shutil.rmtree(self.dir, ignore_errors=True)
        return False


def run_pipeline(config: PipelineConfig, manifest: DatasetManifest | None = None,
                 timestamp: str | None = None) -> tuple[DistilledManifest, dict]:
    """Full pipeline; writes the distilled manifest, per-class CSVs and ``summary.json``.

    Nothing is left in ``config.out`` if any class fails.
    """
    config.validate()
    if manifest is None:
        manifest = config.load()
    results = process_classes(manifest, config)
    distilled = distilled_from(results, config)
    report = {
        "config": {k: v for k, v in asdict(config).items() if k not in ("out", "jobs")},
        "total_selected": len(distilled),
        "classes": {str(r.class_label): r.summary() for r in results},
        "warnings": distilled.warnings,
    }
    with Staging(config.out) as stage:
        for r in results:
            write_communities(r, stage / f"communities_class{r.class_label}.csv")
            write_centrality(r, stage / f"centrality_class{r.class_label}.csv")
        emit_distilled_manifest(distilled, manifest, stage / DISTILLED_NAME, timestamp)
        with open(stage / "summary.json", "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return distilled, report
