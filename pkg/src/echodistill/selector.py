"""Pick representative videos per class from communities and centrality."""
from __future__ import annotations

import datetime as _dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from . import __version__
from .centrality import SCHEME, CentralityTable
from .errors import ConfigError, ManifestError
from .feature_store import DatasetManifest, save_manifest
from .graph_builder import ClassGraph
from .infomap import Partition, flow_model

log = logging.getLogger(__name__)

ALLOCATIONS = ("equal", "proportional")


@dataclass(frozen=True)
class Pick:
    video_id: str
    module_id: int
    combined: float
    pick_round: int


@dataclass
class ClassSelection:
    class_label: int
    picks: list[Pick]
    warnings: list[str] = field(default_factory=list)

    @property
    def video_ids(self) -> list[str]:
        return [p.video_id for p in self.picks]


@dataclass
class DistilledManifest:
    classes: dict[int, ClassSelection]
    vpc: int
    seed: int
    alloc: str = "equal"
    extra: dict = field(default_factory=dict)
    version: str = __version__
    scheme: str = SCHEME

    @property
    def video_ids(self) -> list[str]:
        return [v for c in sorted(self.classes) for v in self.classes[c].video_ids]

    @property
    def warnings(self) -> list[str]:
        return [w for c in sorted(self.classes) for w in self.classes[c].warnings]

    def __len__(self) -> int:
        return sum(len(s.picks) for s in self.classes.values())

    def provenance(self, timestamp: str | None = None) -> dict:
        return {
            "tool": "echodistill",
            "version": self.version,
            "centrality": self.scheme,
            "alloc": self.alloc,
            "vpc": self.vpc,
            "seed": self.seed,
            "classes": {
                str(c): {
                    "picks": [
                        {"video_id": p.video_id, "module_id": p.module_id,
                         "combined": p.combined, "pick_round": p.pick_round}
                        for p in sel.picks
                    ],
                    "warnings": sel.warnings,
                }
                for c, sel in sorted(self.classes.items())
            },
            **self.extra,
            "warnings": self.warnings,
            "timestamp": timestamp if timestamp is not None else _dt.datetime.now(_dt.timezone.utc).isoformat(),
        }


def _community_order(graph: ClassGraph, assignment) -> list[int]:
    n_mod = max(assignment) + 1
    flows = flow_model(graph, assignment).module_flow.tolist()
    return sorted(range(n_mod), key=lambda m: (-flows[m], m))


def _quotas(sizes: list[int], budget: int) -> list[int]:
    """Largest-remainder apportionment of ``budget`` by size, capped at size."""
    quota = [0] * len(sizes)
    remaining = budget
    active = [i for i, s in enumerate(sizes) if s > 0]
    while remaining > 0 and active:
        total = sum(sizes[i] - quota[i] for i in active)
        shares = {i: remaining * (sizes[i] - quota[i]) / total for i in active}
        grant = {i: int(shares[i]) for i in active}
        left = remaining - sum(grant.values())
        for i in sorted(active, key=lambda i: (-(shares[i] - grant[i]), active.index(i)))[:left]:
            grant[i] += 1
        for i in active:
            take = min(grant[i], sizes[i] - quota[i])
            quota[i] += take
            remaining -= take
        active = [i for i in active if quota[i] < sizes[i]]
    return quota


def select_representatives(
    graph: ClassGraph,
    partition: Partition,
    centrality: CentralityTable,
    vpc: int,
    alloc: str = "equal",
) -> ClassSelection:
    """Choose ``min(vpc, N_c)`` nodes, spreading picks across communities.

    Communities are visited by descending flow (lower index on ties).  With
    ``alloc="equal"`` picks go round-robin, each community giving up its most
    central unpicked node; ``"proportional"`` sizes each community's share by
    its node count.  Within a community, ties in centrality go to the
    smaller video id.
    """
    if vpc < 1:
        raise ConfigError(f"vpc must be >= 1, got {vpc}")
    if alloc not in ALLOCATIONS:
        raise ConfigError(f"unknown allocation {alloc!r}; expected one of {ALLOCATIONS}")
    assignment = partition.assignment
    n = graph.n_nodes
    if len(assignment) != n or len(centrality) != n:
        raise ConfigError("graph, partition and centrality table disagree on node count")
    warnings = []
    if vpc > n:
        msg = f"class {graph.class_label}: vpc={vpc} exceeds its {n} video(s); selecting all"
        log.warning(msg)
        warnings.append(msg)
    budget = min(vpc, n)
    combined = centrality.combined.tolist()
    order = _community_order(graph, assignment)
    queues = {m: [] for m in order}
    for node, m in enumerate(assignment):
        queues[m].append(node)
    for m in order:
        queues[m].sort(key=lambda i: (-combined[i], graph.node_ids[i]))

    if alloc == "equal":
        quota = {m: len(queues[m]) for m in order}
    else:
        quota = dict(zip(order, _quotas([len(queues[m]) for m in order], budget)))
    picks: list[Pick] = []
    rnd = 0
    while len(picks) < budget:
        for m in order:
            if len(picks) == budget:
                break
            if rnd < min(quota[m], len(queues[m])):
                node = queues[m][rnd]
                picks.append(Pick(graph.node_ids[node], m, combined[node], rnd))
        rnd += 1
    return ClassSelection(graph.class_label, picks, warnings)


def select_all(manifest: DatasetManifest, class_label: int) -> ClassSelection:
    """Fallback for classes too small to build a graph: keep every member."""
    members = manifest.class_members(class_label)
    warnings = [f"class {class_label}: {len(members)} video(s), too few for a graph; selecting all"]
    picks = [Pick(r.video_id, 0, 0.0, i) for i, r in enumerate(members)]
    return ClassSelection(class_label, picks, warnings)


def provenance_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".provenance.json")


def emit_distilled_manifest(
    selection: DistilledManifest,
    manifest: DatasetManifest,
    path,
    timestamp: str | None = None,
) -> tuple[Path, Path]:
    """Write the selected records as a manifest plus a provenance JSON sidecar.

    Rows point at the source feature bytes when the source manifest was
    loaded from disk; otherwise a new feature file is written beside ``path``.
    """
    ids = selection.video_ids
    if not ids:
        raise ManifestError("refusing to write an empty distilled manifest")
    sub = manifest.subset(ids)
    link = all(r.source is not None for r in sub.records)
    path = Path(path)
    save_manifest(sub, path, link_features=link)
    side = provenance_path(path)
    try:
        with open(side, "w") as fh:
            json.dump(selection.provenance(timestamp), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise ManifestError(f"cannot write provenance {side}: {exc}") from exc
    return path, side


def load_provenance(path) -> Mapping:
    with open(provenance_path(path)) as fh:
        return json.load(fh)
