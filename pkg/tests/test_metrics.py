import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossview.metrics import MetricError, evaluate, mann_whitney_auc, roc_auc


def probs_from_pred(pred, c=2):
    return np.eye(c)[np.asarray(pred)]


def test_perfect_predictions():
    y = np.array([0, 1, 1, 0, 1])
    P = np.where(probs_from_pred(y) == 1, 0.9, 0.1)
    r = evaluate(P, y)
    assert r.accuracy == 1.0
    assert r.precision == [1.0, 1.0] and r.sensitivity == [1.0, 1.0] and r.f1 == [1.0, 1.0]
    assert r.auc == 1.0 and not r.zero_division


def test_single_class_predictor():
    y = np.array([0, 1] * 5)
    r = evaluate(np.tile([0.8, 0.2], (10, 1)), y)
    assert r.accuracy == 0.5
    assert r.sensitivity[1] == 0.0
    assert "precision[1]" in r.zero_division
    assert r.auc == 0.5


def test_confusion_example():
    y = np.r_[np.zeros(50, int), np.ones(50, int)]
    pred = np.r_[np.zeros(40, int), np.ones(10, int), np.zeros(5, int), np.ones(45, int)]
    r = evaluate(probs_from_pred(pred), y)
    assert r.confusion == [[40, 10], [5, 45]]
    assert r.precision[0] == pytest.approx(40 / 45, abs=1e-15)
    assert r.sensitivity[0] == pytest.approx(40 / 50, abs=1e-15)
    assert r.f1[0] == pytest.approx(2 * (8 / 9 * 4 / 5) / (8 / 9 + 4 / 5), abs=1e-15)
    assert r.accuracy == 0.85 and r.n_evaluated == 100


def test_argmax_tie_goes_to_lower_class():
    r = evaluate(np.array([[0.5, 0.5], [0.5, 0.5]]), [1, 1])
    assert r.confusion == [[0, 0], [2, 0]]


def test_evaluate_errors():
    with pytest.raises(MetricError):
        evaluate(np.array([[0.5, 0.5]]), [0, 1])
    with pytest.raises(MetricError):
        evaluate(np.array([[0.6, 0.6]]), [0])


def test_one_hot_labels_accepted():
    y = np.array([0, 1, 1])
    P = np.array([[0.7, 0.3], [0.2, 0.8], [0.6, 0.4]])
    assert evaluate(P, np.eye(2)[y]).to_dict() == evaluate(P, y).to_dict()


def test_roc_examples():
    y = np.array([0, 0, 1, 1])
    assert roc_auc([0.1, 0.2, 0.8, 0.9], y)[0] == 1.0
    assert roc_auc([0.9, 0.8, 0.2, 0.1], y)[0] == 0.0
    auc, pts = roc_auc([0.3] * 4, y)
    assert auc == 0.5 and pts == [(0.0, 0.0, np.inf), (1.0, 1.0, 0.3)]


def test_roc_single_class():
    with pytest.raises(MetricError):
        roc_auc([0.1, 0.2], [1, 1])


@pytest.mark.parametrize("seed", range(10))
def test_roc_matches_mann_whitney(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, 50)
    y[:2] = [0, 1]
    s = np.round(rng.random(50), 1)  # coarse scores force ties
    assert abs(roc_auc(s, y)[0] - mann_whitney_auc(s, y)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40))
def test_roc_curve_invariants(pairs):
    s = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs])
    if y.all() or not y.any():
        return
    auc, pts = roc_auc(s, y)
    fpr = [p[0] for p in pts]
    tpr = [p[1] for p in pts]
    assert pts[0][:2] == (0.0, 0.0) and pts[-1][:2] == (1.0, 1.0)
    assert all(a <= b for a, b in zip(fpr, fpr[1:]))
    assert all(a <= b for a, b in zip(tpr, tpr[1:]))
    assert 0.0 <= auc <= 1.0
    assert abs(auc - mann_whitney_auc(s, y)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 4), st.integers(1, 60))
def test_metric_identities(seed, c, n):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(c), size=n)
    y = rng.integers(0, c, n)
    r = evaluate(P, y)
    conf = np.array(r.confusion)
    assert conf.sum() == n
    assert r.accuracy == pytest.approx(np.trace(conf) / n)
    assert 0 <= r.accuracy <= 1
    for k in range(c):
        row = conf[k].sum()
        assert r.sensitivity[k] == (conf[k, k] / row if row else 0.0)


def test_positive_class_score():
    y = np.array([0, 0, 1, 1])
    P = np.array([[0.9, 0.1], [0.6, 0.4], [0.3, 0.7], [0.2, 0.8]])
    assert evaluate(P, y).auc == 1.0
    assert evaluate(P, y, positive_class=0).auc == 1.0
