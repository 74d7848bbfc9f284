"""Support vector classifiers trained by stochastic subgradient descent on the hinge loss.

Linear: primal Pegasos updates with step 1/(lambda t), lambda = 1/(C n). The
bias is learned as the weight of a constant feature. RBF: the kernelized
variant keeps per-sample violation counts; the constant feature becomes a
``+1`` added to the kernel, so the bias equals the sum of dual coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimMismatch, SingleClassInput
from .mlp import sigmoid


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class SvmModel:
    kernel: str
    n_features: int
    w: np.ndarray | None = None
    b: float = 0.0
    support_vectors: np.ndarray | None = None
    dual_coef: np.ndarray | None = None  # alpha_i * y_i, scaled
    gamma: float | None = None

    kind = "svm"

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.n_features:
            raise DimMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        if self.kernel == "linear":
            return X @ self.w + self.b
        if len(self.dual_coef) == 0:
            return np.full(X.shape[0], self.b)
        out = np.empty(X.shape[0])
        for s in range(0, X.shape[0], 1024):
            K = rbf_kernel(X[s : s + 1024], self.support_vectors, self.gamma)
            out[s : s + 1024] = K @ self.dual_coef + self.b
        return out

    def predict_score(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))

    def to_dict(self) -> dict:
        d = {"kernel": self.kernel, "n_features": self.n_features, "b": self.b}
        if self.kernel == "linear":
            d["w"] = self.w.tolist()
        else:
            d["gamma"] = self.gamma
            d["support_vectors"] = self.support_vectors.ravel().tolist()
            d["dual_coef"] = self.dual_coef.tolist()
        return d

    @classmethod
    def from_dict(cls, d) -> "SvmModel":
        if d["kernel"] == "linear":
            return cls("linear", d["n_features"], w=np.asarray(d["w"]), b=d["b"])
        sv = np.asarray(d["support_vectors"], dtype=np.float64).reshape(-1, d["n_features"])
        return cls(
            "rbf",
            d["n_features"],
            b=d["b"],
            support_vectors=sv,
            dual_coef=np.asarray(d["dual_coef"], dtype=np.float64),
            gamma=d["gamma"],
        )


def _signed_labels(y) -> np.ndarray:
    y = np.asarray(y)
    if len(np.unique(y)) < 2:
        raise SingleClassInput("SVM training needs both classes")
    return np.where(y > 0, 1.0, -1.0)


def train_svm(X, y, kernel="linear", C=1.0, gamma=None, epochs=50, seed=0) -> SvmModel:
    """Fit a hinge-loss SVM; ``gamma=None`` uses 1 / (d * Var(X))."""
    X = np.asarray(X, dtype=np.float64)
    ys = _signed_labels(y)
    n, d = X.shape
    if C <= 0:
        raise ValueError("C must be > 0")
    lam = 1.0 / (C * n)
    rng = np.random.default_rng(seed)
    if kernel == "linear":
        return _train_linear(X, ys, lam, epochs, rng)
    if kernel == "rbf":
        if gamma is None:
            var = X.var()
            gamma = 1.0 / (d * var) if var > 0 else 1.0
        if gamma <= 0:
            raise ValueError("gamma must be > 0")
        return _train_rbf(X, ys, lam, float(gamma), epochs, rng)
    raise ValueError(f"unknown kernel {kernel!r}")


def _train_linear(X, ys, lam, epochs, rng) -> SvmModel:
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    w = np.zeros(d + 1)
    radius = 1.0 / np.sqrt(lam)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            violated = ys[i] * (Xa[i] @ w) < 1.0
            w *= 1.0 - eta * lam
            if violated:
                w += eta * ys[i] * Xa[i]
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm
    return SvmModel("linear", d, w=w[:-1].copy(), b=float(w[-1]))


def _train_rbf(X, ys, lam, gamma, epochs, rng) -> SvmModel:
    n, d = X.shape
    K = rbf_kernel(X, X, gamma) + 1.0
    alpha = np.zeros(n)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            f = (alpha * ys) @ K[:, i] / (lam * t)
            if ys[i] * f < 1.0:
                alpha[i] += 1.0
    sv = np.nonzero(alpha)[0]
    coef = alpha[sv] * ys[sv] / (lam * t)
    return SvmModel(
        "rbf",
        d,
        b=float(coef.sum()),
        support_vectors=X[sv].copy(),
        dual_coef=coef,
        gamma=gamma,
    )
