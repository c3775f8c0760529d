"""Feature manifests, EF class binning and cardiac frame-index arithmetic.

A binary manifest is a small text file::

    dim=3072,classes=5
    video_id,ef,split,feature_file,offset
    0X1A2B...,61.3,train,features.f32,0
    ...

whose rows point into little-endian float32 feature files (one contiguous
block of ``dim`` values per record, no padding).  Feature-file paths are
resolved relative to the manifest's directory.  For small datasets the
all-in-one CSV layout ``video_id,ef,split,f_0,...,f_{D-1}`` is also accepted.
"""
from __future__ import annotations

import csv
import math
import operator
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    DomainError,
    DuplicateIdError,
    ManifestError,
    OrderingError,
)

DEFAULT_DIM = 3072
SPLITS = ("train", "val", "test")
FEATURE_DTYPE = np.dtype("<f4")
MANIFEST_COLUMNS = ("video_id", "ef", "split", "feature_file", "offset")


@dataclass(frozen=True)
class ClassInterval:
    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = False

    def __contains__(self, ef: float) -> bool:
        above = ef >= self.lo if self.lo_closed else ef > self.lo
        below = ef <= self.hi if self.hi_closed else ef < self.hi
        return above and below

    def __str__(self) -> str:
        left = "[" if self.lo_closed else "("
        right = "]" if self.hi_closed else ")"
        return f"{left}{self.lo:g},{self.hi:g}{right}"


# Severe, Moderate, Mild, Normal, Hyperdynamic.  The clinical ranges leave
# 39-40 and 49-50 unassigned; they are closed upward here.
DEFAULT_BOUNDS: tuple[ClassInterval, ...] = (
    ClassInterval(0, 30, True, False),
    ClassInterval(30, 40, True, False),
    ClassInterval(40, 50, True, False),
    ClassInterval(50, 70, True, True),
    ClassInterval(70, 100, False, True),
)
CLASS_NAMES = ("Severe", "Moderate", "Mild", "Normal", "Hyperdynamic")

_INTERVAL_RE = re.compile(r"\s*([\[(])\s*([^,\s]+)\s*,\s*([^\])\s]+)\s*([\])])\s*")


def validate_bounds(bounds: Sequence[ClassInterval]) -> tuple[ClassInterval, ...]:
    """Check that ``bounds`` is an ordered partition of [0, 100]."""
    bounds = tuple(bounds)
    if not bounds:
        raise ConfigError("class bounds are empty")
    first, last = bounds[0], bounds[-1]
    if first.lo != 0 or not first.lo_closed:
        raise ConfigError(f"class bounds must start with a closed 0, got {first}")
    if last.hi != 100 or not last.hi_closed:
        raise ConfigError(f"class bounds must end with a closed 100, got {last}")
    for iv in bounds:
        if not (math.isfinite(iv.lo) and math.isfinite(iv.hi)) or iv.lo >= iv.hi:
            raise ConfigError(f"empty or malformed class interval {iv}")
    for left, right in zip(bounds, bounds[1:]):
        if left.hi != right.lo:
            raise ConfigError(f"class intervals {left} and {right} leave a gap or overlap")
        if left.hi_closed == right.lo_closed:
            # both closed -> shared point in two classes; both open -> point in none
            raise ConfigError(f"class intervals {left} and {right} must share their endpoint exactly once")
    return bounds


def parse_bounds(text: str) -> tuple[ClassInterval, ...]:
    """Parse ``"[0,30),[30,40),...,(70,100]"`` into validated intervals."""
    intervals = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _INTERVAL_RE.match(text, pos)
        if m is None:
            raise ConfigError(f"cannot parse class bounds at {text[pos:]!r}")
        left, lo, hi, right = m.groups()
        try:
            intervals.append(ClassInterval(float(lo), float(hi), left == "[", right == "]"))
        except ValueError:
            raise ConfigError(f"non-numeric class bound in {m.group(0)!r}") from None
        pos = m.end()
        if pos < len(text):
            if text[pos] != ",":
                raise ConfigError(f"expected ',' between intervals in {text!r}")
            pos += 1
    return validate_bounds(intervals)


def format_bounds(bounds: Sequence[ClassInterval]) -> str:
    return ",".join(str(iv) for iv in bounds)


def ef_to_class(ef: float, bounds: Sequence[ClassInterval] = DEFAULT_BOUNDS) -> int:
    """Return the index of the class interval containing ``ef`` (percent)."""
    if bounds is not DEFAULT_BOUNDS:
        bounds = validate_bounds(bounds)
    ef = float(ef)
    if not (0.0 <= ef <= 100.0):
        raise DomainError(f"EF {ef!r} is outside [0, 100]")
    for label, iv in enumerate(bounds):
        if ef in iv:
            return label
    raise ConfigError(f"no class interval contains EF {ef}")  # unreachable for valid bounds


@dataclass(frozen=True)
class FrameIndices:
    i0: int
    i1: int
    i2: int
    i3: int
    i4: int

    @property
    def degenerate(self) -> bool:
        """True when the derived frames do not fall strictly between their anchors."""
        return not (self.i0 < self.i1 < self.i2 < self.i3 <= self.i4)


def derive_frame_indices(i0: int, i2: int) -> FrameIndices:
    """Derive the mid-frame and next-cycle frame indices from an ES/ED pair.

    ``i0`` is the end-systolic frame and ``i2`` the following end-diastolic
    frame.  The next ES frame ``i4`` lies half the ES->ED span past ``i2``
    (diastole taking two thirds of the cycle); ``i1`` and ``i3`` are the
    midpoints of the two halves.  Fractional offsets are rounded half to even.
    Offsets are rounded rather than absolute midpoints, which keeps the
    result translation-equivariant.
    """
    i0 = operator.index(i0)
    i2 = operator.index(i2)
    if i0 < 0:
        raise OrderingError(f"frame index i0={i0} is negative")
    if i2 <= i0:
        raise OrderingError(f"ED frame i2={i2} must come after ES frame i0={i0}")
    span = i2 - i0
    half = round(span / 2)
    i4 = i2 + half
    return FrameIndices(i0=i0, i1=i0 + half, i2=i2, i3=i2 + round(half / 2), i4=i4)


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    video_id: str
    ef: float
    class_label: int
    split: str
    feature: np.ndarray
    # (absolute feature file, byte offset) when the record was loaded from a
    # binary manifest; lets sub-manifests point at the same bytes.
    source: tuple[str, int] | None = field(default=None, repr=False)

    def __eq__(self, other):
        if not isinstance(other, FeatureRecord):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.ef == other.ef
            and self.class_label == other.class_label
            and self.split == other.split
            and self.feature.dtype == other.feature.dtype
            and self.feature.shape == other.feature.shape
            and self.feature.tobytes() == other.feature.tobytes()
        )

    __hash__ = None


def make_record(
    video_id: str,
    ef: float,
    feature,
    split: str = "train",
    bounds: Sequence[ClassInterval] = DEFAULT_BOUNDS,
    source: tuple[str, int] | None = None,
) -> FeatureRecord:
    """Build a record, deriving its class label from ``ef``."""
    if split not in SPLITS:
        raise ManifestError(f"record {video_id!r}: unknown split {split!r}")
    vec = np.ascontiguousarray(feature, dtype=np.float32).reshape(-1)
    return FeatureRecord(video_id, float(ef), ef_to_class(ef, bounds), split, vec, source)


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[FeatureRecord, ...]
    dim: int = DEFAULT_DIM
    class_bounds: tuple[ClassInterval, ...] = DEFAULT_BOUNDS

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "class_bounds", validate_bounds(self.class_bounds))
        if self.dim < 1:
            raise ConfigError(f"feature dimension must be positive, got {self.dim}")
        if not self.records:
            raise ManifestError("no records")
        seen = set()
        for rec in self.records:
            if rec.video_id in seen:
                raise DuplicateIdError(f"duplicate video_id {rec.video_id!r}")
            seen.add(rec.video_id)
            if rec.feature.shape != (self.dim,):
                raise DimensionError(
                    f"record {rec.video_id!r}: feature length {rec.feature.size}, expected {self.dim}"
                )
            expected = ef_to_class(rec.ef, self.class_bounds)
            if rec.class_label != expected:
                raise ManifestError(
                    f"record {rec.video_id!r}: class {rec.class_label} does not match EF {rec.ef} (class {expected})"
                )

    @property
    def class_count(self) -> int:
        return len(self.class_bounds)

    def __len__(self) -> int:
        return len(self.records)

    def class_members(self, class_label: int) -> list[FeatureRecord]:
        return [r for r in self.records if r.class_label == class_label]

    def class_counts(self) -> list[int]:
        counts = [0] * self.class_count
        for r in self.records:
            counts[r.class_label] += 1
        return counts

    def record(self, video_id: str) -> FeatureRecord:
        for r in self.records:
            if r.video_id == video_id:
                return r
        raise KeyError(video_id)

    def subset(self, video_ids: Iterable[str]) -> "DatasetManifest":
        """Sub-manifest with the given ids, in the order given."""
        index = {r.video_id: r for r in self.records}
        return DatasetManifest(tuple(index[v] for v in video_ids), self.dim, self.class_bounds)

    def features(self, records: Sequence[FeatureRecord] | None = None) -> np.ndarray:
        records = self.records if records is None else records
        return np.stack([r.feature for r in records]) if records else np.empty((0, self.dim), np.float32)


def _parse_header(line: str, path) -> tuple[int, int]:
    fields = {}
    for part in line.strip().split(","):
        key, sep, value = part.partition("=")
        if not sep:
            raise ManifestError(f"{path}: malformed header {line.strip()!r}, expected dim=<D>,classes=<C>")
        fields[key.strip()] = value.strip()
    try:
        return int(fields["dim"]), int(fields["classes"])
    except (KeyError, ValueError):
        raise ManifestError(f"{path}: malformed header {line.strip()!r}, expected dim=<D>,classes=<C>") from None


def _parse_ef(text: str, video_id: str, path) -> float:
    try:
        ef = float(text)
    except ValueError:
        raise ManifestError(f"{path}: record {video_id!r}: unparseable EF {text!r}") from None
    if not (0.0 <= ef <= 100.0):
        raise ManifestError(f"{path}: record {video_id!r}: EF {ef} outside [0, 100]")
    return ef


def _check_expected_dim(dim: int, expected: int | None, path) -> None:
    if expected is not None and dim != expected:
        raise DimensionError(f"{path}: feature dimension {dim}, expected {expected}")


def _finish(records, dim, bounds, path) -> DatasetManifest:
    if not records:
        raise ManifestError(f"{path}: no records")
    try:
        return DatasetManifest(tuple(records), dim, bounds)
    except ManifestError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def load_manifest(
    path,
    bounds: Sequence[ClassInterval] = DEFAULT_BOUNDS,
    dim: int | None = None,
) -> DatasetManifest:
    """Load a manifest, auto-detecting the binary-index and all-in-one CSV layouts.

    ``dim``, when given, is the expected feature dimension; a file declaring
    another dimension is rejected.
    """
    path = Path(path)
    bounds = validate_bounds(bounds)
    try:
        with open(path, newline="") as fh:
            first = fh.readline()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if first.startswith("dim="):
        return _load_binary_manifest(path, bounds, dim)
    return load_csv_manifest(path, bounds, dim)


def _load_binary_manifest(path: Path, bounds, expected_dim) -> DatasetManifest:
    base = path.parent
    records = []
    handles: dict[Path, object] = {}
    try:
        with open(path, newline="") as fh:
            dim, classes = _parse_header(fh.readline(), path)
            _check_expected_dim(dim, expected_dim, path)
            if dim < 1:
                raise DimensionError(f"{path}: feature dimension must be positive, got {dim}")
            if classes != len(bounds):
                raise ConfigError(f"{path}: manifest declares {classes} classes but {len(bounds)} bounds are configured")
            nbytes = dim * FEATURE_DTYPE.itemsize
            for lineno, row in enumerate(csv.reader(fh), start=2):
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                if tuple(c.strip() for c in row) == MANIFEST_COLUMNS:
                    continue
                if len(row) != len(MANIFEST_COLUMNS):
                    raise ManifestError(f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} columns, got {len(row)}")
                video_id, ef_text, split, feature_file, offset_text = (c.strip() for c in row)
                ef = _parse_ef(ef_text, video_id, path)
                if split not in SPLITS:
                    raise ManifestError(f"{path}: record {video_id!r}: unknown split {split!r}")
                try:
                    offset = int(offset_text)
                except ValueError:
                    raise ManifestError(f"{path}: record {video_id!r}: bad offset {offset_text!r}") from None
                if offset < 0:
                    raise ManifestError(f"{path}: record {video_id!r}: negative offset {offset}")
                fpath = (base / feature_file).resolve()
                if fpath not in handles:
                    try:
                        handles[fpath] = open(fpath, "rb")
                    except OSError as exc:
                        raise ManifestError(f"{path}: record {video_id!r}: cannot open feature file {fpath}: {exc}") from exc
                fb = handles[fpath]
                fb.seek(offset)
                blob = fb.read(nbytes)
                if len(blob) != nbytes:
                    raise DimensionError(
                        f"{path}: record {video_id!r}: feature block holds {len(blob) // FEATURE_DTYPE.itemsize} values, expected {dim}"
                    )
                vec = np.frombuffer(blob, dtype=FEATURE_DTYPE).astype(np.float32)
                records.append(
                    FeatureRecord(video_id, ef, ef_to_class(ef, bounds), split, vec, (str(fpath), offset))
                )
    finally:
        for fb in handles.values():
            fb.close()
    return _finish(records, dim, bounds, path)


def load_csv_manifest(
    path,
    bounds: Sequence[ClassInterval] = DEFAULT_BOUNDS,
    dim: int | None = None,
) -> DatasetManifest:
    """Load the all-in-one ``video_id,ef,split,f_0,...`` layout."""
    path = Path(path)
    bounds = validate_bounds(bounds)
    records = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ManifestError(f"{path}: no records")
        header = [h.strip() for h in header]
        if header[:3] != ["video_id", "ef", "split"]:
            raise ManifestError(f"{path}: CSV header must start with video_id,ef,split")
        file_dim = len(header) - 3
        if file_dim < 1:
            raise DimensionError(f"{path}: CSV header declares no feature columns")
        _check_expected_dim(file_dim, dim, path)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            video_id = row[0].strip()
            if len(row) - 3 != file_dim:
                raise DimensionError(
                    f"{path}:{lineno}: record {video_id!r}: feature length {len(row) - 3}, expected {file_dim}"
                )
            ef = _parse_ef(row[1].strip(), video_id, path)
            split = row[2].strip()
            if split not in SPLITS:
                raise ManifestError(f"{path}: record {video_id!r}: unknown split {split!r}")
            try:
                vec = np.array([float(x) for x in row[3:]], dtype=np.float32)
            except ValueError:
                raise ManifestError(f"{path}: record {video_id!r}: unparseable feature value") from None
            records.append(FeatureRecord(video_id, ef, ef_to_class(ef, bounds), split, vec))
    return _finish(records, file_dim, bounds, path)


def save_manifest(
    manifest: DatasetManifest,
    path,
    feature_file: str | None = None,
    link_features: bool = False,
) -> Path:
    """Write ``manifest`` in the binary-index layout.

    Features go to ``feature_file`` (default ``<stem>.f32`` beside the
    manifest).  With ``link_features`` every row instead points at the bytes
    its record was loaded from, and no feature file is written.
    """
    path = Path(path)
    if not manifest.records:
        raise ManifestError("no records")
    if link_features and any(r.source is None for r in manifest.records):
        raise ManifestError("link_features requires every record to come from a binary manifest")
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    try:
        if link_features:
            base = path.parent.resolve()
            for r in manifest.records:
                src, offset = r.source
                rows.append((r, _relative(src, base), offset))
        else:
            feature_file = feature_file or path.stem + ".f32"
            fpath = path.parent / feature_file
            nbytes = manifest.dim * FEATURE_DTYPE.itemsize
            with open(fpath, "wb") as fb:
                for i, r in enumerate(manifest.records):
                    fb.write(np.asarray(r.feature, dtype=FEATURE_DTYPE).tobytes())
                    rows.append((r, feature_file, i * nbytes))
        with open(path, "w", newline="") as fh:
            fh.write(f"dim={manifest.dim},classes={manifest.class_count}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MANIFEST_COLUMNS)
            for r, ffile, offset in rows:
                writer.writerow((r.video_id, repr(r.ef), r.split, ffile, offset))
    except OSError as exc:
        raise ManifestError(f"cannot write manifest {path}: {exc}") from exc
    return path


def save_csv_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["video_id", "ef", "split"] + [f"f_{k}" for k in range(manifest.dim)])
            for r in manifest.records:
                writer.writerow([r.video_id, repr(r.ef), r.split] + [repr(float(x)) for x in r.feature])
    except OSError as exc:
        raise ManifestError(f"cannot write manifest {path}: {exc}") from exc
    return path


def _relative(target: str, base: Path) -> str:
    try:
        return os.path.relpath(target, base)
    except ValueError:  # different drives
        return str(target)
