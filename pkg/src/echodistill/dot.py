"""Graphviz export of a class graph colored by community."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

from .errors import ManifestError
from .graph_builder import ClassGraph
from .infomap import Partition

PALETTE = "set312"  # 12-color Brewer scheme; module m uses color (m % 12) + 1


def _quote(s: str) -> str:
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(graph: ClassGraph, partition: Partition, ef: Mapping[str, float] | None = None) -> str:
    lines = [
        f"graph {_quote(f'class_{graph.class_label}')} {{",
        f"  node [style=filled, colorscheme={PALETTE}];",
    ]
    for node, vid in enumerate(graph.node_ids):
        m = partition.assignment[node]
        attrs = [f"module={m}", f"color={m % 12 + 1}"]
        if ef is not None and vid in ef:
            attrs.append(f'ef="{ef[vid]:g}"')
        lines.append(f"  {_quote(vid)} [{', '.join(attrs)}];")
    for a, b, w in graph.edges:
        label = f"{w:.6g}"
        lines.append(f"  {_quote(graph.node_ids[a])} -- {_quote(graph.node_ids[b])} [weight={label}, label=\"{label}\"];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_dot(graph: ClassGraph, partition: Partition, path, ef: Mapping[str, float] | None = None) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(to_dot(graph, partition, ef))
    except OSError as exc:
        raise ManifestError(f"cannot write DOT file {path}: {exc}") from exc
    return path
