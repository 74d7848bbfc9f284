"""Decision trees, random forests (Gini) and Newton-boosted trees (logistic loss)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimMismatch, SingleClassInput
from .mlp import sigmoid


@dataclass
class Tree:
    """Flat node arrays; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # leaf payload: (n_nodes, 2) class counts, or (n_nodes,) weights

    def apply(self, X) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.nonzero(active)[0]
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def depth(self) -> int:
        def rec(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(rec(self.left[i]), rec(self.right[i]))

        return rec(0)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )


TIE_TOL = 1e-12


def _sorted_columns(Xn: np.ndarray, feats: np.ndarray):
    cols = Xn[:, feats]
    order = np.argsort(cols, axis=0, kind="stable")
    return np.take_along_axis(cols, order, axis=0), order


def _pick(gain: np.ndarray, xs: np.ndarray, feats: np.ndarray):
    """Best (feature, threshold, gain) from a (m-1, f) gain table; -inf marks invalid cuts.

    Ties go to the lowest feature index, then the lowest threshold. Gains
    within ``TIE_TOL`` of the best count as tied, so rounding in the
    vectorized sums cannot reorder equal candidates.
    """
    by_feat = np.argsort(feats, kind="stable")
    g = gain[:, by_feat].T  # (f, m-1) in ascending feature order
    best = g.max()
    if not np.isfinite(best):
        return None
    flat = int(np.flatnonzero(g >= best - TIE_TOL * max(1.0, abs(best)))[0])
    fi, pos = divmod(flat, g.shape[1])
    col = by_feat[fi]
    lo, hi = xs[pos, col], xs[pos + 1, col]
    thr = (lo + hi) / 2.0
    if not lo <= thr < hi:  # adjacent floats
        thr = lo
    return int(feats[col]), float(thr), float(g.flat[flat])


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    return 0.0 if n == 0 else float(1.0 - np.sum((counts / n) ** 2))


def best_gini_split(X, y, feats=None):
    """Split maximizing Gini gain over midpoints between distinct sorted values.

    Returns ``(feature, threshold, gain)`` or ``None`` when every candidate
    feature is constant. Gain is parent impurity minus the size-weighted
    child impurity.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    feats = np.arange(X.shape[1]) if feats is None else np.asarray(feats)
    m = X.shape[0]
    if m < 2:
        return None
    xs, order = _sorted_columns(X, feats)
    ys = y[order].astype(np.float64)
    pos_left = np.cumsum(ys, axis=0)[:-1]
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    n_right = m - n_left
    pos_total = float(y.sum())
    pos_right = pos_total - pos_left
    gl = 1.0 - (pos_left / n_left) ** 2 - (1.0 - pos_left / n_left) ** 2
    gr = 1.0 - (pos_right / n_right) ** 2 - (1.0 - pos_right / n_right) ** 2
    parent = gini([m - pos_total, pos_total])
    gain = parent - (n_left * gl + n_right * gr) / m
    gain[xs[:-1] >= xs[1:]] = -np.inf
    return _pick(gain, xs, feats)


def best_newton_split(X, g, h, reg_lambda, min_child_weight=0.0, feats=None):
    """Split maximizing the second-order gain of a boosted regression tree."""
    X = np.asarray(X, dtype=np.float64)
    feats = np.arange(X.shape[1]) if feats is None else np.asarray(feats)
    m = X.shape[0]
    if m < 2:
        return None
    xs, order = _sorted_columns(X, feats)
    GL = np.cumsum(g[order], axis=0)[:-1]
    HL = np.cumsum(h[order], axis=0)[:-1]
    G, H = float(g.sum()), float(h.sum())
    GR, HR = G - GL, H - HL
    gain = 0.5 * (GL**2 / (HL + reg_lambda) + GR**2 / (HR + reg_lambda) - G**2 / (H + reg_lambda))
    bad = (xs[:-1] >= xs[1:]) | (HL < min_child_weight) | (HR < min_child_weight)
    gain[bad] = -np.inf
    return _pick(gain, xs, feats)


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def add(self, value) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def tree(self) -> Tree:
        return Tree(
            np.asarray(self.feature, dtype=np.int64),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.left, dtype=np.int64),
            np.asarray(self.right, dtype=np.int64),
            np.asarray(self.value, dtype=np.float64),
        )


def build_classification_tree(X, y, max_features, rng, max_depth=None, min_samples_split=2) -> Tree:
    """Grow until leaves are pure, too small to split, or at ``max_depth``."""
    b = _Builder()
    d = X.shape[1]
    stack = [(np.arange(X.shape[0]), 0, None)]
    while stack:
        rows, depth, parent = stack.pop()
        yr = y[rows]
        pos = int(yr.sum())
        node = b.add([len(rows) - pos, pos])
        if parent is not None:
            p, side = parent
            (b.left if side == 0 else b.right)[p] = node
        if (
            pos in (0, len(rows))
            or len(rows) < min_samples_split
            or (max_depth is not None and depth >= max_depth)
        ):
            continue
        perm = rng.permutation(d)
        split = best_gini_split(X[rows], yr, perm[:max_features])
        # keep drawing features when every drawn one is constant on this node
        start = max_features
        while split is None and start < d:
            split = best_gini_split(X[rows], yr, perm[start : start + max_features])
            start += max_features
        if split is None:
            continue
        f, thr, _ = split
        go_left = X[rows, f] <= thr
        b.feature[node], b.threshold[node] = f, thr
        stack.append((rows[~go_left], depth + 1, (node, 1)))
        stack.append((rows[go_left], depth + 1, (node, 0)))
    return b.tree()


@dataclass
class ForestModel:
    trees: list[Tree]
    n_features: int
    feature_subsample: int

    kind = "forest"

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def tree_votes(self, X) -> np.ndarray:
        """(n_trees, n) array of per-tree 0/1 predictions (majority of leaf counts)."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.n_features:
            raise DimMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        votes = []
        for t in self.trees:
            counts = t.value[t.apply(X)]
            votes.append((counts[:, 1] > counts[:, 0]).astype(np.int64))
        return np.array(votes)

    def predict_score(self, X) -> np.ndarray:
        return self.tree_votes(X).mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "feature_subsample": self.feature_subsample,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d) -> "ForestModel":
        return cls([Tree.from_dict(t) for t in d["trees"]], d["n_features"], d["feature_subsample"])


def train_forest(X, y, n_trees=100, max_depth=None, min_samples_split=2, seed=0) -> ForestModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    n, d = X.shape
    mtry = max(1, int(np.floor(np.sqrt(d))))
    trees = []
    for i in range(n_trees):
        # per-tree seed keeps results independent of training order
        rng = np.random.default_rng(seed ^ i)
        boot = rng.integers(0, n, size=n)
        trees.append(build_classification_tree(X[boot], y[boot], mtry, rng, max_depth, min_samples_split))
    return ForestModel(trees, d, mtry)


@dataclass
class GbdtModel:
    base_score: float
    trees: list[Tree]
    learning_rate: float
    max_depth: int
    n_features: int
    reg_lambda: float = 1.0
    loss_history: list[float] = field(default_factory=list)

    kind = "gbdt"

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.n_features:
            raise DimMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        out = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            out += self.learning_rate * t.value[t.apply(X)]
        return out

    def predict_score(self, X) -> np.ndarray:
        return sigmoid(self.logits(X))

    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "n_features": self.n_features,
            "reg_lambda": self.reg_lambda,
            "loss_history": list(self.loss_history),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d) -> "GbdtModel":
        return cls(
            d["base_score"],
            [Tree.from_dict(t) for t in d["trees"]],
            d["learning_rate"],
            d["max_depth"],
            d["n_features"],
            d.get("reg_lambda", 1.0),
            list(d.get("loss_history", [])),
        )


def log_loss(y, p) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def build_newton_tree(X, g, h, max_depth, reg_lambda, min_child_weight) -> Tree:
    b = _Builder()
    stack = [(np.arange(X.shape[0]), 0, None)]
    while stack:
        rows, depth, parent = stack.pop()
        G, H = float(g[rows].sum()), float(h[rows].sum())
        node = b.add(-G / (H + reg_lambda))
        if parent is not None:
            p, side = parent
            (b.left if side == 0 else b.right)[p] = node
        if depth >= max_depth:
            continue
        split = best_newton_split(X[rows], g[rows], h[rows], reg_lambda, min_child_weight)
        if split is None or split[2] <= 0:
            continue
        f, thr, _ = split
        go_left = X[rows, f] <= thr
        b.feature[node], b.threshold[node] = f, thr
        stack.append((rows[~go_left], depth + 1, (node, 1)))
        stack.append((rows[go_left], depth + 1, (node, 0)))
    return b.tree()


def train_gbdt(
    X,
    y,
    n_rounds=100,
    max_depth=6,
    lr=0.3,
    reg_lambda=1.0,
    seed=0,
    min_child_weight=1.0,
    base_score=None,
) -> GbdtModel:
    """Newton boosting of regression trees on the logistic loss.

    ``base_score`` is a probability; by default the training positive rate.
    ``seed`` is accepted for interface symmetry; the exact greedy builder
    uses no randomness.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if base_score is None:
        rate = y.mean()
        if rate in (0.0, 1.0):
            raise SingleClassInput("both classes are needed for the prior log-odds")
        base_score = rate
    base = float(np.log(base_score / (1.0 - base_score)))
    logits = np.full(X.shape[0], base)
    trees = []
    history = [log_loss(y, sigmoid(logits))]
    for _ in range(n_rounds):
        p = sigmoid(logits)
        g = p - y
        h = p * (1.0 - p)
        t = build_newton_tree(X, g, h, max_depth, reg_lambda, min_child_weight)
        logits = logits + lr * t.value[t.apply(X)]
        trees.append(t)
        history.append(log_loss(y, sigmoid(logits)))
    return GbdtModel(base, trees, lr, max_depth, X.shape[1], reg_lambda, history)
