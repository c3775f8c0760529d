"""Hard and boundary-tolerant (soft) EF classification accuracy."""
from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import DomainError, EvaluationError
from .feature_store import DEFAULT_BOUNDS, ClassInterval, ef_to_class, validate_bounds

DEFAULT_TOLERANCE = 2.0


@dataclass(frozen=True)
class PredictionRecord:
    video_id: str
    true_ef: float
    predicted_ef: float


@dataclass(frozen=True)
class RunStats:
    accuracies: tuple[float, ...]
    mean: float
    std: float

    @property
    def n(self) -> int:
        return len(self.accuracies)

    def to_dict(self) -> dict:
        return {"accuracies": list(self.accuracies), "mean": self.mean, "std": self.std, "n": self.n}


@dataclass
class Scored:
    accuracy: float
    n: int
    warnings: list[str] = field(default_factory=list)


def _clamp(preds: Sequence[PredictionRecord]) -> tuple[list[tuple[float, float]], list[str]]:
    if not preds:
        raise EvaluationError("no predictions to evaluate")
    pairs, clamped = [], []
    for p in preds:
        if not (0.0 <= p.true_ef <= 100.0):
            raise DomainError(f"{p.video_id}: true EF {p.true_ef} outside [0, 100]")
        if math.isnan(p.predicted_ef):
            raise EvaluationError(f"{p.video_id}: predicted EF is NaN")
        pred = min(max(p.predicted_ef, 0.0), 100.0)
        if pred != p.predicted_ef:
            clamped.append(p.video_id)
        pairs.append((p.true_ef, pred))
    warnings = [f"clamped {len(clamped)} prediction(s) into [0, 100]: {', '.join(clamped)}"] if clamped else []
    return pairs, warnings


def hard_accuracy(preds: Sequence[PredictionRecord], bounds: Sequence[ClassInterval] = DEFAULT_BOUNDS) -> float:
    """Percent of predictions binned into the same class as the true EF."""
    return score_hard(preds, bounds).accuracy


def score_hard(preds, bounds=DEFAULT_BOUNDS) -> Scored:
    bounds = validate_bounds(bounds)
    pairs, warnings = _clamp(preds)
    hits = sum(ef_to_class(t, bounds) == ef_to_class(p, bounds) for t, p in pairs)
    return Scored(100.0 * hits / len(pairs), len(pairs), warnings)


def soft_correct(
    predicted_ef: float,
    true_ef: float,
    bounds: Sequence[ClassInterval] = DEFAULT_BOUNDS,
    tolerance: float = DEFAULT_TOLERANCE,
) -> bool:
    """Whether ``predicted_ef`` falls in the true class widened by ``tolerance``.

    The widened interval is closed at both ends and clipped to [0, 100].
    """
    if tolerance < 0:
        raise DomainError(f"tolerance must be >= 0, got {tolerance}")
    iv = bounds[ef_to_class(true_ef, bounds)]
    return max(iv.lo - tolerance, 0.0) <= predicted_ef <= min(iv.hi + tolerance, 100.0)


def soft_accuracy(
    preds: Sequence[PredictionRecord],
    bounds: Sequence[ClassInterval] = DEFAULT_BOUNDS,
    tolerance: float = DEFAULT_TOLERANCE,
) -> float:
    return score_soft(preds, bounds, tolerance).accuracy


def score_soft(preds, bounds=DEFAULT_BOUNDS, tolerance=DEFAULT_TOLERANCE) -> Scored:
    bounds = validate_bounds(bounds)
    if tolerance < 0:
        raise DomainError(f"tolerance must be >= 0, got {tolerance}")
    pairs, warnings = _clamp(preds)
    hits = sum(soft_correct(p, t, bounds, tolerance) for t, p in pairs)
    return Scored(100.0 * hits / len(pairs), len(pairs), warnings)


def aggregate_runs(accuracies: Sequence[float]) -> RunStats:
    """Mean and sample (n-1) standard deviation; std is 0 for a single run."""
    acc = tuple(float(a) for a in accuracies)
    if not acc:
        raise EvaluationError("no runs to aggregate")
    std = statistics.stdev(acc) if len(acc) > 1 else 0.0
    return RunStats(acc, statistics.fmean(acc), std)


def load_predictions(path) -> list[PredictionRecord]:
    """Read a ``video_id,true_ef,predicted_ef`` CSV (header row required)."""
    path = Path(path)
    out = []
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"video_id", "true_ef", "predicted_ef"} - set(reader.fieldnames or ())
            if missing:
                raise EvaluationError(f"{path}: missing column(s) {sorted(missing)}")
            for row in reader:
                try:
                    out.append(PredictionRecord(row["video_id"], float(row["true_ef"]), float(row["predicted_ef"])))
                except ValueError:
                    raise EvaluationError(f"{path}: record {row['video_id']!r}: unparseable EF value") from None
    except OSError as exc:
        raise EvaluationError(f"cannot read predictions {path}: {exc}") from exc
    return out


def evaluate(preds, bounds=DEFAULT_BOUNDS, tolerance=DEFAULT_TOLERANCE) -> dict:
    hard = score_hard(preds, bounds)
    soft = score_soft(preds, bounds, tolerance)
    return {
        "hard_acc": hard.accuracy,
        "soft_acc": soft.accuracy,
        "tolerance": tolerance,
        "n": hard.n,
        "warnings": hard.warnings,
    }
