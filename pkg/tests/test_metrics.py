import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eleson.metrics import auroc, compute_report, confusion, mean_f1, per_class_f1, prf, roc_curve


def brute_auroc(scores, positives):
    pos = [s for s, p in zip(scores, positives) if p]
    neg = [s for s, p in zip(scores, positives) if not p]
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


def brute_f1(y_true, y_pred, c):
    tp = sum(1 for t, p in zip(y_true, y_pred) if p == c and t == c)
    fp = sum(1 for t, p in zip(y_true, y_pred) if p == c and t != c)
    fn = sum(1 for t, p in zip(y_true, y_pred) if p >= 0 and p != c and t == c)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    return 2 * prec * rec / (prec + rec) if prec + rec else 0.0


def test_f1_examples():
    assert prf(10, 0, 0) == (1.0, 1.0, 1.0)
    assert prf(5, 5, 5) == (0.5, 0.5, 0.5)
    assert prf(0, 0, 0) == (0.0, 0.0, 0.0)


def test_ud_windows_excluded_from_confusion():
    y_true = np.array([0, 0, 1, 2])
    y_pred = np.array([0, -1, 1, -1])
    assert confusion(y_true, y_pred).sum() == 2
    assert per_class_f1(y_true, y_pred)[0] == (1.0, 1.0, 1.0)


def test_auroc_examples():
    assert auroc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auroc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5
    assert auroc([0.1, 0.2], [1, 0]) == 0.0
    assert np.isnan(auroc([0.1, 0.2], [1, 1]))


labels = st.lists(st.integers(0, 2), min_size=1, max_size=25)


@given(st.data())
@settings(max_examples=150, deadline=None)
def test_f1_matches_brute_force(data):
    y_true = data.draw(labels)
    y_pred = data.draw(st.lists(st.integers(-1, 2), min_size=len(y_true), max_size=len(y_true)))
    per = per_class_f1(np.array(y_true), np.array(y_pred))
    for c in (0, 1):
        assert per[c][2] == brute_f1(y_true, y_pred, c)
        p, r, f = per[c]
        if p + r:
            assert abs(f - 2 * p * r / (p + r)) <= 1e-9
    assert mean_f1(y_true, y_pred) == pytest.approx((per[0][2] + per[1][2]) / 2, abs=0)


@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=30))
@settings(max_examples=150, deadline=None)
def test_auroc_matches_pair_counting(pairs):
    scores = [s / 3.0 for s, _ in pairs]
    pos = [p for _, p in pairs]
    if all(pos) or not any(pos):
        return
    assert abs(auroc(scores, pos) - brute_auroc(scores, pos)) <= 1e-9


@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=2, max_size=30))
@settings(max_examples=100, deadline=None)
def test_roc_curve_trapezoid_equals_auroc(pairs):
    scores = [s for s, _ in pairs]
    pos = [p for _, p in pairs]
    if all(pos) or not any(pos):
        return
    fpr, tpr = roc_curve(scores, pos)
    assert fpr[0] == 0 and tpr[0] == 0 and fpr[-1] == pytest.approx(1) and tpr[-1] == pytest.approx(1)
    area = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    assert area == pytest.approx(auroc(scores, pos), abs=1e-9)


def test_report_consistency():
    rng = np.random.default_rng(0)
    conf = rng.dirichlet([1, 1, 1], size=200) * 0.9
    y = rng.integers(0, 3, 200)
    rep = compute_report(y, conf, -conf.max(axis=1), 0.4)
    assert 0 <= rep.ud_ratio <= 1
    assert rep.confusion.sum() == int(round((1 - rep.ud_ratio) * 200))
    keys = dict(rep.rows())
    assert keys["mean_f1"] == f"{rep.mean_f1:.6f}" and "confusion_2_2" in keys
