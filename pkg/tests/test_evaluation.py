import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from echodistill.errors import DomainError, EvaluationError
from echodistill.evaluation import (
    PredictionRecord,
    aggregate_runs,
    evaluate,
    hard_accuracy,
    load_predictions,
    score_soft,
    soft_accuracy,
    soft_correct,
)
from echodistill.feature_store import DEFAULT_BOUNDS, parse_bounds

# Tolerance 2 widens each true class interval to a closed interval, clipped
# to [0, 100]:  Severe [0,32]  Moderate [28,42]  Mild [38,52]
# Normal [48,72]  Hyperdynamic [68,100].
SOFT_CASES = [
    # true, predicted, correct
    (60.0, 48.5, True),
    (45.0, 51.9, True),
    (45.0, 52.1, False),
    (20.0, 32.0, True),
    (20.0, 32.5, False),
    (85.0, 68.0, True),
    (85.0, 67.9, False),
    (35.0, 28.0, True),
]


@pytest.mark.parametrize("true, pred, correct", SOFT_CASES)
def test_soft_cases(true, pred, correct):
    assert soft_correct(pred, true, DEFAULT_BOUNDS, 2.0) is correct


def test_soft_fixture_accuracy():
    preds = [PredictionRecord(f"v{i}", t, p) for i, (t, p, _) in enumerate(SOFT_CASES)]
    assert soft_accuracy(preds, DEFAULT_BOUNDS, 2.0) == 62.5
    # every prediction lands in a neighbouring class, so none is a hard hit
    assert hard_accuracy(preds) == 0.0


def test_hard_accuracy_hand_fixture():
    preds = [
        PredictionRecord("a", 60.0, 55.0),   # Normal / Normal
        PredictionRecord("b", 45.0, 52.0),   # Mild / Normal
        PredictionRecord("c", 29.9, 30.0),   # Severe / Moderate
        PredictionRecord("d", 100.0, 71.0),  # Hyper / Hyper
    ]
    assert hard_accuracy(preds) == 50.0


def test_out_of_range_predictions_are_clamped_with_warning():
    preds = [PredictionRecord("a", 90.0, 130.0), PredictionRecord("b", 10.0, -4.0)]
    scored = score_soft(preds)
    assert scored.accuracy == 100.0
    assert scored.warnings and "a" in scored.warnings[0] and "b" in scored.warnings[0]


def test_bad_inputs():
    with pytest.raises(EvaluationError):
        soft_accuracy([])
    with pytest.raises(DomainError):
        hard_accuracy([PredictionRecord("a", 120.0, 50.0)])
    with pytest.raises(EvaluationError):
        hard_accuracy([PredictionRecord("a", 50.0, math.nan)])


def test_tolerance_zero_equals_hard_accuracy_away_from_boundaries():
    rng = np.random.default_rng(3)
    preds = [PredictionRecord(str(i), float(t), float(p))
             for i, (t, p) in enumerate(rng.uniform(0, 100, (300, 2)))]
    # closed intervals only differ from the half-open classes on boundary points
    assert soft_accuracy(preds, DEFAULT_BOUNDS, 0.0) == hard_accuracy(preds)


@given(
    st.lists(st.tuples(st.floats(0, 100), st.floats(-10, 110)), min_size=1, max_size=30),
    st.floats(0, 50),
    st.floats(0, 50),
)
def test_soft_accuracy_monotone_in_tolerance(pairs, t1, t2):
    preds = [PredictionRecord(str(i), t, p) for i, (t, p) in enumerate(pairs)]
    lo, hi = sorted((t1, t2))
    assert soft_accuracy(preds, DEFAULT_BOUNDS, lo) <= soft_accuracy(preds, DEFAULT_BOUNDS, hi)
    assert soft_accuracy(preds, DEFAULT_BOUNDS, lo) >= hard_accuracy(preds)


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), min_size=1, max_size=30))
def test_accuracy_ignores_order(pairs):
    preds = [PredictionRecord(str(i), t, p) for i, (t, p) in enumerate(pairs)]
    assert hard_accuracy(preds) == hard_accuracy(preds[::-1])
    assert soft_accuracy(preds) == soft_accuracy(preds[::-1])


def test_custom_bounds():
    bounds = parse_bounds("[0,50),[50,100]")
    assert soft_correct(47.0, 60.0, bounds, 3.0)
    assert not soft_correct(46.9, 60.0, bounds, 3.0)


def test_aggregate_runs():
    stats = aggregate_runs([60.0, 70.0, 80.0])
    assert stats.mean == 70.0 and stats.std == 10.0 and stats.n == 3
    assert aggregate_runs([55.0]).std == 0.0
    assert stats.to_dict()["accuracies"] == [60.0, 70.0, 80.0]


def test_load_predictions_and_evaluate(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("video_id,true_ef,predicted_ef\n" + "".join(f"v{i},{t},{p}\n" for i, (t, p, _) in enumerate(SOFT_CASES)))
    preds = load_predictions(path)
    assert len(preds) == 8
    report = evaluate(preds)
    assert report["soft_acc"] == 62.5 and report["n"] == 8 and report["tolerance"] == 2.0
