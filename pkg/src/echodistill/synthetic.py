"""Planted-cluster feature sets for exercising the pipeline end to end."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .feature_store import DEFAULT_BOUNDS, DatasetManifest, FeatureRecord, ef_to_class

_ID_RE = re.compile(r"^syn-c(\d+)-b(\d+)-(\d+)$")


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 5
    clusters: int = 3
    points_per_cluster: int = 30
    dim: int = 64
    sigma: float = 1.0          # per-coordinate spread of each blob
    separation: float = 8.0     # distance between any two blob centers
    seed: int = 0

    def __post_init__(self):
        if self.separation <= 0 or self.sigma <= 0:
            raise ConfigError("separation and sigma must be positive")
        if self.clusters < 1 or self.points_per_cluster < 1 or self.classes < 1:
            raise ConfigError("classes, clusters and points_per_cluster must be >= 1")
        if self.clusters > self.dim:
            raise ConfigError(f"cannot place {self.clusters} equidistant centers in {self.dim} dimensions")


def _centers(k: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    # scaled basis vectors are pairwise equidistant; a random rotation hides the axes
    c = np.zeros((k, dim))
    c[np.arange(k), np.arange(k)] = separation / np.sqrt(2.0)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return (c - c.mean(axis=0)) @ q.T


def _sample_ef(iv, rng: np.random.Generator, bounds) -> float:
    while True:
        ef = float(rng.uniform(iv.lo, iv.hi))
        if ef in iv and ef_to_class(ef, bounds) == bounds.index(iv):
            return ef


def generate_synthetic(spec: SyntheticSpec, bounds=DEFAULT_BOUNDS) -> DatasetManifest:
    """Gaussian blobs per class, EF drawn uniformly inside the class interval.

    Video ids are ``syn-c<class>-b<blob>-<index>``; see :func:`planted_labels`.
    """
    if spec.classes != len(bounds):
        raise ConfigError(f"synthetic spec has {spec.classes} classes but {len(bounds)} bounds are configured")
    rng = np.random.default_rng(spec.seed)
    records = []
    for c in range(spec.classes):
        centers = _centers(spec.clusters, spec.dim, spec.separation, rng)
        for b in range(spec.clusters):
            pts = centers[b] + spec.sigma * rng.standard_normal((spec.points_per_cluster, spec.dim))
            for i, x in enumerate(pts.astype(np.float32)):
                ef = _sample_ef(bounds[c], rng, bounds)
                records.append(FeatureRecord(f"syn-c{c}-b{b}-{i:04d}", ef, c, "train", x))
    return DatasetManifest(tuple(records), spec.dim, bounds)


def planted_labels(video_ids) -> list[int]:
    """Planted blob index of each synthetic video id."""
    out = []
    for v in video_ids:
        m = _ID_RE.match(v)
        if m is None:
            raise ValueError(f"{v!r} is not a synthetic video id")
        out.append(int(m.group(2)))
    return out
