import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histopipe.errors import KOutOfRange, LengthMismatch, SingleClassInput, UndefinedMetric
from histopipe.evaluation import (
    ConfusionMatrix,
    accuracy,
    auc,
    auc_exact,
    confusion,
    evaluate_scores,
    f1,
    kfold,
    precision,
    recall,
    roc_auc,
    roc_curve,
    stratified_split,
    write_roc_csv,
)


def pairs_auc(y, s):
    pos, neg = s[y == 1], s[y == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_split_counts_reproduce_reference():
    labels = np.array(["tumor"] * 4205 + ["benign"] * 1459)
    train, test = stratified_split(labels, 0.2, seed=0)
    assert np.sum(labels[test] == "tumor") == 841
    assert np.sum(labels[test] == "benign") == 292
    assert len(test) == 1133 and len(train) == 4531
    assert not set(train) & set(test)
    assert sorted(np.r_[train, test]) == list(range(len(labels)))


def test_split_edge_cases():
    train, test = stratified_split([0, 0, 1, 1, 1], 0.0, seed=1)
    assert len(test) == 0 and len(train) == 5
    labels = [0] * 10 + [1]
    _, test = stratified_split(labels, 0.2, seed=3)
    assert 10 not in test and len(test) == 2
    # round half up
    _, test = stratified_split([0] * 5 + [1] * 5, 0.5, seed=0)
    assert len(test) == 6
    with pytest.raises(ValueError):
        stratified_split([0, 1], 1.0, seed=0)


def test_split_seeded():
    labels = np.arange(100) % 3
    assert np.array_equal(stratified_split(labels, 0.3, 5)[1], stratified_split(labels, 0.3, 5)[1])


def _is_partition(folds, n):
    flat = np.concatenate(folds)
    return len(flat) == n and set(flat.tolist()) == set(range(n))


def test_kfold_examples():
    folds = kfold(10, 5, seed=0)
    assert [len(f) for f in folds] == [2] * 5 and _is_partition(folds, 10)
    loo = kfold(7, 7, seed=2)
    assert all(len(f) == 1 for f in loo) and _is_partition(loo, 7)
    with pytest.raises(KOutOfRange):
        kfold(5, 1, seed=0)
    with pytest.raises(KOutOfRange):
        kfold(5, 6, seed=0)
    with pytest.raises(LengthMismatch):
        kfold(5, 2, seed=0, stratify_labels=[0, 1])


def test_kfold_partitions_many_seeds():
    rng = np.random.default_rng(0)
    for seed in range(100):
        n = int(rng.integers(2, 60))
        k = int(rng.integers(2, n + 1))
        labels = rng.integers(0, 2, n) if seed % 2 else None
        folds = kfold(n, k, seed, labels)
        assert _is_partition(folds, n)
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1
        if labels is not None:
            for c in (0, 1):
                per = [int(np.sum(labels[f] == c)) for f in folds]
                assert max(per) - min(per) <= 1


def test_confusion_and_metrics_hand_case():
    y_true = [1] * 8 + [0] * 2 + [0] * 6 + [1] * 4
    y_pred = [1] * 8 + [1] * 2 + [0] * 6 + [0] * 4
    cm = confusion(y_true, y_pred)
    assert cm == ConfusionMatrix(tp=8, fp=2, tn=6, fn=4)
    assert precision(cm) == 0.8
    assert round(recall(cm), 4) == 0.6667
    assert round(f1(cm), 4) == 0.7273
    assert accuracy(cm) == 0.7


def test_confusion_examples():
    y = np.array([1, 0, 1, 0])
    cm = confusion(y, y)
    assert cm.fp == cm.fn == 0
    assert all(fn(cm) == 1.0 for fn in (precision, recall, f1, accuracy))
    cm = confusion(y, np.ones(4))
    assert (cm.fp, cm.fn) == (2, 0)
    with pytest.raises(LengthMismatch):
        confusion([1, 0], [1])


def test_undefined_metrics():
    cm = ConfusionMatrix(tp=0, fp=0, tn=5, fn=3)
    with pytest.raises(UndefinedMetric):
        precision(cm)
    assert recall(cm) == 0.0
    report, _ = evaluate_scores([0, 0, 0], [0.1, 0.2, 0.3])
    assert report.precision is None and report.recall is None and report.auc is None
    assert report.accuracy == 1.0


@settings(max_examples=100)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_accuracy_exact(tp, fp, tn, fn):
    cm = ConfusionMatrix(tp, fp, tn, fn)
    if cm.total:
        assert accuracy(cm) == (tp + tn) / (tp + fp + tn + fn)


def test_roc_ideal_and_tied():
    y = np.array([0, 0, 1, 1])
    c = roc_curve(y, [0.1, 0.2, 0.8, 0.9])
    assert any(p.fpr == 0 and p.tpr == 1 for p in c.points)
    assert auc(c) == 1.0
    t = roc_curve(y, [0.5] * 4)
    assert [(p.fpr, p.tpr) for p in t.points] == [(0.0, 0.0), (1.0, 1.0)]
    assert auc(t) == 0.5
    with pytest.raises(SingleClassInput):
        roc_curve([1, 1], [0.2, 0.3])


def test_roc_matches_threshold_sweep():
    rng = np.random.default_rng(10)
    y = np.array([0, 1] * 5)
    s = rng.integers(0, 5, size=10) / 4.0
    c = roc_curve(y, s)
    sweep = [(0.0, 0.0)]
    for t in sorted(set(s.tolist()), reverse=True):
        pred = s >= t
        sweep.append((np.sum(pred & (y == 0)) / 5, np.sum(pred & (y == 1)) / 5))
    assert [(p.fpr, p.tpr) for p in c.points] == sweep
    fprs = [p.fpr for p in c.points]
    assert fprs == sorted(fprs) and c.points[-1].fpr == c.points[-1].tpr == 1.0


@pytest.mark.parametrize("tied", [False, True])
def test_auc_equals_all_pairs(tied):
    rng = np.random.default_rng(200)
    y = rng.integers(0, 2, 200)
    s = rng.integers(0, 20, 200) / 19.0 if tied else rng.random(200)
    assert abs(roc_auc(y, s) - pairs_auc(y, s)) <= 1e-12


def test_auc_complement_exact():
    rng = np.random.default_rng(1)
    y = rng.integers(0, 2, 200)
    s = rng.integers(0, 30, 200) / 29.0
    a = auc_exact(roc_curve(y, s))
    assert auc_exact(roc_curve(y, 1 - s)) == 1 - a
    assert isinstance(a, Fraction)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=4, max_size=30), st.integers(0, 2**31))
def test_auc_invariant_under_monotone_transform(vals, seed):
    y = np.random.default_rng(seed).integers(0, 2, len(vals))
    if y.min() == y.max():
        y[0] = 1 - y[0]
    s = np.array(vals, dtype=float)
    a = roc_curve(y, s)
    b = roc_curve(y, np.exp(3 * s) + 7)
    assert [(p.fp, p.tp) for p in a.points] == [(p.fp, p.tp) for p in b.points]
    assert auc_exact(a) == auc_exact(b)


def test_report_and_csv(tmp_path):
    y = [0, 0, 1, 1, 1]
    report, curve = evaluate_scores(y, [0.1, 0.6, 0.4, 0.8, 0.9], threshold=0.5, metadata={"seed": 3})
    d = report.to_dict()
    assert d["confusion"] == {"tp": 2, "fp": 1, "tn": 1, "fn": 1}
    assert d["metadata"]["positive_class"] == "tumor" and d["metadata"]["seed"] == 3
    assert all(0 <= d[k] <= 1 for k in ("precision", "recall", "f1", "accuracy", "auc"))
    write_roc_csv(tmp_path / "roc.csv", curve)
    lines = (tmp_path / "roc.csv").read_text().splitlines()
    assert lines[0] == "threshold,fpr,tpr"
    assert lines[1].startswith("inf,") and len(lines) == len(curve.points) + 1
    assert math.isclose(auc(curve), pairs_auc(np.array(y), np.array([0.1, 0.6, 0.4, 0.8, 0.9])))
