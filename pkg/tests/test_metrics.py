import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowshift.errors import DataError
from flowshift.metrics import ConfusionMatrix, compute_metrics, confusion, evaluate


def test_confusion_examples():
    assert confusion([1, 0, 1], [1, 0, 1]) == ConfusionMatrix(tp=2, fp=0, tn=1, fn=0)
    assert confusion([0, 0, 0, 0], [1, 1, 1, 1]).fn == 4
    assert confusion([1, 1, 0, 0], [1, 0, 1, 0]) == ConfusionMatrix(1, 1, 1, 1)


def test_confusion_rejects_mismatch():
    with pytest.raises(DataError):
        confusion([1, 0], [1])
    with pytest.raises(DataError):
        confusion([], [])


def test_perfect_predictions():
    r = evaluate([1, 0, 1, 0], [1, 0, 1, 0])
    assert (r.f1, r.accuracy, r.bacc, r.mcc) == (1.0, 1.0, 1.0, 1.0)


def test_balanced_confusion():
    r = compute_metrics(ConfusionMatrix(1, 1, 1, 1))
    assert (r.f1, r.accuracy, r.bacc, r.mcc) == (0.5, 0.5, 0.5, 0.0)


def test_random_predictions_are_uninformative():
    rng = np.random.default_rng(0)
    truths = np.repeat([0, 1], 5000)
    r = evaluate(rng.integers(0, 2, 10_000), truths)
    assert abs(r.mcc) < 0.05 and abs(r.bacc - 0.5) < 0.05


def test_constant_predictions_have_zero_mcc():
    assert evaluate([0, 0, 0], [0, 1, 1]).mcc == 0.0
    assert evaluate([1, 1, 1], [0, 1, 1]).mcc == 0.0
    assert evaluate([0, 0], [0, 0]).f1 == 0.0


labels = st.lists(st.integers(0, 1), min_size=1, max_size=60)


@given(st.data())
def test_label_swap_symmetry(data):
    truths = np.array(data.draw(labels))
    preds = np.array(data.draw(st.lists(st.integers(0, 1), min_size=len(truths), max_size=len(truths))))
    a, b = evaluate(preds, truths), evaluate(1 - preds, 1 - truths)
    assert a.accuracy == pytest.approx(b.accuracy)
    assert a.bacc == pytest.approx(b.bacc)
    assert abs(a.mcc) == pytest.approx(abs(b.mcc))


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_metrics_within_bounds_and_match_formulas(tp, fp, tn, fn):
    if tp + fp + tn + fn == 0:
        return
    r = compute_metrics(ConfusionMatrix(tp, fp, tn, fn))
    for v in (r.f1, r.accuracy, r.bacc, r.tpr, r.tnr, r.fpr):
        assert 0 <= v <= 1
    assert -1 - 1e-12 <= r.mcc <= 1 + 1e-12
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    assert r.mcc == pytest.approx((tp * tn - fp * fn) / math.sqrt(den) if den else 0.0)
    assert r.f1 == pytest.approx(2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0)


def test_empty_matrix_rejected():
    with pytest.raises(DataError):
        compute_metrics(ConfusionMatrix(0, 0, 0, 0))
