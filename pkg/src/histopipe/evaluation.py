"""Stratified splits, k-fold partitions, confusion-matrix metrics, ROC and AUC.

The positive class is tumor (label 1) throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (
    EmptyClass,
    KOutOfRange,
    LengthMismatch,
    SingleClassInput,
    UndefinedMetric,
)

POSITIVE = "tumor"


def stratified_split(labels, test_frac: float, seed: int):
    """Per class, ``round_half_up(n_c * test_frac)`` samples go to test."""
    labels = np.asarray(labels)
    if not 0 <= test_frac < 1:
        raise ValueError(f"test_frac must be in [0, 1), got {test_frac}")
    classes = np.unique(labels)
    if len(classes) == 0:
        raise EmptyClass("no samples")
    rng = np.random.default_rng(seed)
    test = []
    for c in classes:
        idx = np.nonzero(labels == c)[0]
        if len(idx) == 0:
            raise EmptyClass(f"class {c!r} has no samples")
        n_test = math.floor(len(idx) * test_frac + 0.5)
        test.append(rng.permutation(idx)[:n_test])
    test_idx = np.sort(np.concatenate(test)).astype(np.int64)
    train_idx = np.setdiff1d(np.arange(len(labels)), test_idx)
    return train_idx, test_idx


def kfold(n: int, k: int, seed: int, stratify_labels=None) -> list[np.ndarray]:
    """Partition ``range(n)`` into k validation folds whose sizes differ by at most 1.

    With ``stratify_labels``, samples are dealt class by class round-robin so
    per-class fold counts also differ by at most 1.
    """
    if not 2 <= k <= n:
        raise KOutOfRange(f"k={k} not in [2, n={n}]")
    rng = np.random.default_rng(seed)
    if stratify_labels is None:
        order = rng.permutation(n)
    else:
        labels = np.asarray(stratify_labels)
        if len(labels) != n:
            raise LengthMismatch("stratify_labels must have length n")
        order = np.concatenate(
            [rng.permutation(np.nonzero(labels == c)[0]) for c in np.unique(labels)]
        )
    folds = [[] for _ in range(k)]
    for pos, i in enumerate(order):
        folds[pos % k].append(int(i))
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(y_true, y_pred) -> ConfusionMatrix:
    t = np.asarray(y_true).astype(np.int64)
    p = np.asarray(y_pred).astype(np.int64)
    if t.shape != p.shape:
        raise LengthMismatch(f"{t.shape} vs {p.shape}")
    return ConfusionMatrix(
        tp=int(np.sum((t == 1) & (p == 1))),
        fp=int(np.sum((t == 0) & (p == 1))),
        tn=int(np.sum((t == 0) & (p == 0))),
        fn=int(np.sum((t == 1) & (p == 0))),
    )


def _ratio(num, den, name):
    if den == 0:
        raise UndefinedMetric(f"{name} undefined (zero denominator)")
    return num / den


def precision(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fp, "precision")


def recall(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fn, "recall")


def f1(cm: ConfusionMatrix) -> float:
    p, r = precision(cm), recall(cm)
    return _ratio(2 * p * r, p + r, "f1")


def accuracy(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp + cm.tn, cm.total, "accuracy")


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float
    fp: int
    tp: int


@dataclass(frozen=True)
class RocCurve:
    points: tuple[RocPoint, ...]
    n_pos: int
    n_neg: int


def roc_curve(y_true, scores) -> RocCurve:
    """Operating points at every distinct score, descending, after a (0, 0) sentinel.

    A sample is predicted positive when its score >= threshold, so all
    samples sharing a score flip together.
    """
    y = np.asarray(y_true).astype(np.int64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise LengthMismatch(f"{y.shape} vs {s.shape}")
    P, N = int(y.sum()), int(len(y) - y.sum())
    if P == 0 or N == 0:
        raise SingleClassInput("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(s[1:] != s[:-1])[0], len(s) - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    pts = [RocPoint(0.0, 0.0, math.inf, 0, 0)]
    for i, tp, fp in zip(last, tps, fps):
        pts.append(RocPoint(int(fp) / N, int(tp) / P, float(s[i]), int(fp), int(tp)))
    return RocCurve(tuple(pts), P, N)


def auc_exact(curve: RocCurve) -> Fraction:
    """Trapezoidal area as an exact rational from the integer operating points."""
    twice = 0
    for a, b in zip(curve.points[:-1], curve.points[1:]):
        twice += (b.fp - a.fp) * (b.tp + a.tp)
    return Fraction(twice, 2 * curve.n_pos * curve.n_neg)


def auc(curve: RocCurve) -> float:
    return float(auc_exact(curve))


def roc_auc(y_true, scores) -> float:
    return auc(roc_curve(y_true, scores))


def write_roc_csv(path, curve: RocCurve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for p in curve.points:
            w.writerow([repr(p.threshold), repr(p.fpr), repr(p.tpr)])


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    precision: float | None
    recall: float | None
    f1: float | None
    accuracy: float | None
    auc: float | None
    per_fold: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = asdict(self.confusion)
        return d


def _maybe(fn, cm):
    try:
        return fn(cm)
    except UndefinedMetric:
        return None


def evaluate_scores(y_true, scores, threshold: float = 0.5, metadata=None):
    """Build an EvalReport (and its ROC curve) from scores; undefined metrics become None."""
    y = np.asarray(y_true).astype(np.int64)
    s = np.asarray(scores, dtype=np.float64)
    cm = confusion(y, (s >= threshold).astype(np.int64))
    curve = None
    auc_v = None
    if 0 < y.sum() < len(y):
        curve = roc_curve(y, s)
        auc_v = auc(curve)
    report = EvalReport(
        confusion=cm,
        precision=_maybe(precision, cm),
        recall=_maybe(recall, cm),
        f1=_maybe(f1, cm),
        accuracy=_maybe(accuracy, cm),
        auc=auc_v,
        metadata={"positive_class": POSITIVE, **(metadata or {})},
    )
    return report, curve
