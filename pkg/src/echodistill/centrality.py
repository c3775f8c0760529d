"""Modular centrality: node strength split into intra- and inter-module parts."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AssignmentError
from .graph_builder import ClassGraph
from .infomap import Partition

SCHEME = "strength-modulus"


@dataclass(frozen=True)
class CentralityTable:
    local: np.ndarray
    global_: np.ndarray
    combined: np.ndarray
    strength: np.ndarray

    def __len__(self) -> int:
        return len(self.combined)

    def rows(self):
        return zip(self.local.tolist(), self.global_.tolist(), self.combined.tolist())


def _normalized(x: np.ndarray) -> np.ndarray:
    top = x.max() if x.size else 0.0
    return x / top if top > 0 else np.zeros_like(x)


def modular_centrality(graph: ClassGraph, partition: Partition | tuple) -> CentralityTable:
    """Local and global strength per node and their combined rank key.

    ``combined = hypot(local / max(local), global / max(global))``, a
    normalized component being 0 when its maximum is 0.
    """
    assignment = partition.assignment if isinstance(partition, Partition) else tuple(partition)
    if len(assignment) != graph.n_nodes:
        raise AssignmentError(f"partition covers {len(assignment)} nodes, graph has {graph.n_nodes}")
    n = graph.n_nodes
    inside: list[list[float]] = [[] for _ in range(n)]
    across: list[list[float]] = [[] for _ in range(n)]
    for a, b, w in zip(graph.u.tolist(), graph.v.tolist(), graph.weight.tolist()):
        bucket = inside if assignment[a] == assignment[b] else across
        bucket[a].append(w)
        bucket[b].append(w)
    local = np.array([math.fsum(ws) for ws in inside], dtype=np.float64)
    global_ = np.array([math.fsum(ws) for ws in across], dtype=np.float64)
    combined = np.hypot(_normalized(local), _normalized(global_))
    return CentralityTable(local, global_, combined, graph.strengths())
