"""Per-class similarity graphs over feature vectors."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ClassTooSmallError, DataError, DegenerateDataError, GraphError, ManifestError
from .feature_store import DatasetManifest

DEFAULT_KNN = 10
_ROW_BLOCK = 128
# Weights are stored on a fixed-point grid of 2**-WEIGHT_BITS times the
# largest weight's binade, so any sum of up to 2**(53 - WEIGHT_BITS) of them
# is exact in floating point, in any order.
WEIGHT_BITS = 36


def quantize_weights(w: np.ndarray) -> np.ndarray:
    """Round weights onto the fixed-point grid used by :class:`ClassGraph`."""
    w = np.asarray(w, dtype=np.float64)
    if not w.size:
        return w.copy()
    e = math.frexp(float(w.max()))[1]
    return np.ldexp(np.rint(np.ldexp(w, WEIGHT_BITS - e)), e - WEIGHT_BITS)


@dataclass(frozen=True, eq=False)
class ClassGraph:
    """Undirected weighted graph; node ``i`` is ``node_ids[i]``.

    Edges are stored once with ``u < v`` in three parallel arrays.  Weights
    are snapped to a fixed-point grid (relative step 2**-36 of the largest
    weight) so node strengths and their intra/inter-module splits add up
    exactly.
    """

    node_ids: tuple[str, ...]
    u: np.ndarray
    v: np.ndarray
    weight: np.ndarray
    class_label: int = 0

    def __post_init__(self):
        n = len(self.node_ids)
        u = np.asarray(self.u, dtype=np.int64).reshape(-1)
        v = np.asarray(self.v, dtype=np.int64).reshape(-1)
        w = np.asarray(self.weight, dtype=np.float64).reshape(-1)
        if not (u.shape == v.shape == w.shape):
            raise GraphError("edge arrays differ in length")
        if len(set(self.node_ids)) != n:
            raise GraphError("duplicate node ids")
        if u.size:
            if (u < 0).any() or (v >= n).any():
                raise GraphError("edge endpoint out of range")
            if (u >= v).any():
                raise GraphError("edges must satisfy u < v (no self-loops, stored once)")
            if not np.isfinite(w).all() or (w <= 0).any():
                raise GraphError("edge weights must be finite and strictly positive")
            keys = u * n + v
            if np.unique(keys).size != keys.size:
                raise GraphError("duplicate edge")
            w = quantize_weights(w)
            if (w == 0).any():
                raise GraphError(f"edge weights span more than 2**{WEIGHT_BITS}; drop the negligible ones first")
        for name, arr in (("u", u), ("v", v), ("weight", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "node_ids", tuple(self.node_ids))

    @classmethod
    def from_edges(cls, node_ids: Sequence[str] | int, edges: Iterable[tuple[int, int, float]], class_label: int = 0):
        """Build from ``(a, b, w)`` triples in either orientation."""
        if isinstance(node_ids, int):
            node_ids = [str(i) for i in range(node_ids)]
        us, vs, ws = [], [], []
        for a, b, w in edges:
            a, b = int(a), int(b)
            if a == b:
                raise GraphError(f"self-loop on node {a}")
            us.append(min(a, b))
            vs.append(max(a, b))
            ws.append(float(w))
        return cls(tuple(node_ids), np.array(us, dtype=np.int64), np.array(vs, dtype=np.int64),
                   np.array(ws, dtype=np.float64), class_label)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return int(self.u.size)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(w)) for a, b, w in zip(self.u, self.v, self.weight)]

    @property
    def total_weight(self) -> float:
        return math.fsum(self.weight.tolist())

    def strengths(self) -> np.ndarray:
        """Weighted degree of every node."""
        incident: list[list[float]] = [[] for _ in range(self.n_nodes)]
        for a, b, w in zip(self.u.tolist(), self.v.tolist(), self.weight.tolist()):
            incident[a].append(w)
            incident[b].append(w)
        return np.array([math.fsum(ws) for ws in incident], dtype=np.float64)

    def adjacency(self) -> list[dict[int, float]]:
        adj: list[dict[int, float]] = [{} for _ in range(self.n_nodes)]
        for a, b, w in zip(self.u.tolist(), self.v.tolist(), self.weight.tolist()):
            adj[a][b] = w
            adj[b][a] = w
        return adj

    def weight_matrix(self) -> np.ndarray:
        m = np.zeros((self.n_nodes, self.n_nodes))
        m[self.u, self.v] = self.weight
        m[self.v, self.u] = self.weight
        return m

    def scaled(self, c: float) -> "ClassGraph":
        return ClassGraph(self.node_ids, self.u, self.v, self.weight * c, self.class_label)

    def subgraph(self, nodes: Sequence[int]) -> "ClassGraph":
        """Induced subgraph; node ``i`` of the result is ``nodes[i]`` here."""
        nodes = list(nodes)
        pos = np.full(self.n_nodes, -1, dtype=np.int64)
        pos[nodes] = np.arange(len(nodes))
        keep = (pos[self.u] >= 0) & (pos[self.v] >= 0)
        a, b = pos[self.u[keep]], pos[self.v[keep]]
        return ClassGraph(tuple(self.node_ids[i] for i in nodes), np.minimum(a, b), np.maximum(a, b),
                          self.weight[keep], self.class_label)


def pairwise_distances(features, ids: Sequence[str] | None = None) -> np.ndarray:
    """Euclidean distance matrix.

    Squared differences are accumulated in float64 over the feature index in
    order k = 0..D-1 for every pair, so each entry is independent of how
    pairs are batched.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError(f"need at least 2 feature vectors, got shape {x.shape}")
    bad = ~np.isfinite(x).all(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        name = repr(ids[i]) if ids is not None else f"#{i}"
        raise DataError(f"record {name} has NaN or infinite feature values")
    n, dim = x.shape
    xt = np.ascontiguousarray(x.T)
    out = np.empty((n, n))
    for start in range(0, n, _ROW_BLOCK):
        stop = min(start + _ROW_BLOCK, n)
        acc = np.zeros((stop - start, n))
        for k in range(dim):
            col = xt[k]
            diff = col[start:stop, None] - col[None, :]
            acc += diff * diff
        out[start:stop] = np.sqrt(acc)
    np.fill_diagonal(out, 0.0)
    return out


def median_bandwidth(d: np.ndarray) -> float:
    iu = np.triu_indices(d.shape[0], k=1)
    return float(np.median(d[iu]))


def distances_to_flow(d: np.ndarray, sigma: str | float = "median") -> np.ndarray:
    """Gaussian-kernel similarities ``exp(-d^2 / 2 sigma^2)``; diagonal set to 0.

    ``sigma`` is ``"median"`` (median off-diagonal distance) or a positive
    number.
    """
    d = np.asarray(d, dtype=np.float64)
    if sigma == "median":
        s = median_bandwidth(d)
    else:
        s = float(sigma)
        if not s > 0 or not math.isfinite(s):
            raise DegenerateDataError(f"kernel bandwidth must be positive, got {sigma!r}")
    if s == 0:
        raise DegenerateDataError(
            "median pairwise distance is 0 (most points identical); use a fixed --sigma or uniform weights"
        )
    sim = np.exp(-(d * d) / (2.0 * s * s))
    np.fill_diagonal(sim, 0.0)
    return sim


def knn_mask(d: np.ndarray, k: int) -> np.ndarray:
    """Symmetrized k-NN adjacency: (i, j) kept if either is among the other's k nearest.

    Neighbors at equal distance are ranked by index.
    """
    n = d.shape[0]
    k = min(k, n - 1)
    mask = np.zeros((n, n), dtype=bool)
    if k < 1:
        return mask
    d = d.copy()
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    mask[rows, order.reshape(-1)] = True
    return mask | mask.T


def graph_from_features(
    features,
    node_ids: Sequence[str],
    knn: int | None = None,
    sigma: str | float = "median",
    raw_distance_weights: bool = False,
    class_label: int = 0,
) -> ClassGraph:
    features = np.asarray(features)
    n = features.shape[0]
    if n < 2:
        raise ClassTooSmallError(class_label, n)
    if knn is not None and knn < 1:
        raise GraphError(f"knn must be >= 1, got {knn}")
    d = pairwise_distances(features, node_ids)
    if raw_distance_weights:
        w = d
    else:
        w = distances_to_flow(d, sigma)
    keep = np.triu(np.ones((n, n), dtype=bool), k=1)
    if knn is not None:
        keep &= knn_mask(d, knn)
    # kernel underflow or duplicate points (raw mode) give zero weights, and
    # weights below the fixed-point resolution would round to zero
    keep &= w > 0
    if keep.any():
        keep &= quantize_weights(np.where(keep, w, 0.0)) > 0
    u, v = np.nonzero(keep)
    return ClassGraph(tuple(node_ids), u, v, w[u, v], class_label)


def build_class_graph(
    manifest: DatasetManifest,
    class_label: int,
    knn: int | None = DEFAULT_KNN,
    sigma: str | float = "median",
    raw_distance_weights: bool = False,
) -> ClassGraph:
    """Graph over the members of one class, in manifest order.

    ``knn`` selects the symmetrized k-NN graph; ``None`` gives the complete
    graph.  On high-dimensional features the median-bandwidth kernel is
    nearly flat across a complete graph, which hides community structure,
    hence the sparse default.
    """
    members = manifest.class_members(class_label)
    if len(members) < 2:
        raise ClassTooSmallError(class_label, len(members))
    return graph_from_features(
        manifest.features(members),
        [r.video_id for r in members],
        knn=knn,
        sigma=sigma,
        raw_distance_weights=raw_distance_weights,
        class_label=class_label,
    )


def save_graph(graph: ClassGraph, path) -> Path:
    """JSON-lines cache: a header object, then one ``{"u","v","w"}`` object per edge."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps({"class_label": graph.class_label, "node_ids": list(graph.node_ids)}) + "\n")
        for a, b, w in graph.edges:
            fh.write(json.dumps({"u": a, "v": b, "w": w}) + "\n")
    return path


def load_graph(path) -> ClassGraph:
    path = Path(path)
    try:
        with open(path) as fh:
            header = json.loads(fh.readline())
            edges = [(e["u"], e["v"], e["w"]) for e in map(json.loads, filter(str.strip, fh))]
    except (OSError, ValueError, KeyError) as exc:
        raise ManifestError(f"cannot read graph cache {path}: {exc}") from exc
    return ClassGraph.from_edges(header["node_ids"], edges, header.get("class_label", 0))
