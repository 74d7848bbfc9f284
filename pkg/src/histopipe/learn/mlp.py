"""Fully connected binary classifier: ReLU hidden layers, sigmoid output, BCE loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimMismatch, NonFiniteLoss


@dataclass
class MlpModel:
    layer_sizes: list[int]
    weights: list[np.ndarray]  # weights[l] has shape (layer_sizes[l], layer_sizes[l+1])
    biases: list[np.ndarray]
    loss_history: list[float] = field(default_factory=list)

    kind = "mlp"

    @property
    def n_features(self) -> int:
        return self.layer_sizes[0]

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.n_features:
            raise DimMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        return forward(self.weights, self.biases, X)[0]

    def predict_score(self, X) -> np.ndarray:
        return sigmoid(self.logits(X))

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "loss_history": list(self.loss_history),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        sizes = list(d["layer_sizes"])
        ws = [
            np.asarray(w, dtype=np.float64).reshape(sizes[i], sizes[i + 1])
            for i, w in enumerate(d["weights"])
        ]
        bs = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
        return cls(sizes, ws, bs, list(d.get("loss_history", [])))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_from_logits(z, y) -> float:
    # mean of softplus(z) - y*z, computed without overflow
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def forward(weights, biases, X):
    """Return (output logits, cache of pre-activations and activations)."""
    acts = [X]
    pre = []
    a = X
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = a @ W + b
        pre.append(z)
        a = np.maximum(z, 0.0) if i < len(weights) - 1 else z
        acts.append(a)
    return pre[-1][:, 0], (pre, acts)


def loss_and_grads(weights, biases, X, y):
    """Mean BCE and its gradients with respect to every weight and bias."""
    z, (pre, acts) = forward(weights, biases, X)
    n = X.shape[0]
    loss = bce_from_logits(z, y)
    delta = ((sigmoid(z) - y) / n)[:, None]
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (pre[i - 1] > 0)
    return loss, gw, gb


def init_params(layer_sizes, rng):
    ws, bs = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        ws.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return ws, bs


def train_mlp(X, y, arch=None, epochs=100, lr=0.01, batch=32, seed=0) -> MlpModel:
    """Mini-batch gradient descent on mean binary cross-entropy.

    ``arch`` lists hidden widths, or the full ``[d, hidden..., 1]`` sizes.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    hidden = list(arch) if arch is not None else [64, 32]
    sizes = hidden if hidden and hidden[0] == d and hidden[-1] == 1 else [d, *hidden, 1]
    rng = np.random.default_rng(seed)
    ws, bs = init_params(sizes, rng)
    history = []
    batch = max(1, min(int(batch), n))
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            _, gw, gb = loss_and_grads(ws, bs, X[idx], y[idx])
            for i in range(len(ws)):
                ws[i] -= lr * gw[i]
                bs[i] -= lr * gb[i]
        loss = bce_from_logits(forward(ws, bs, X)[0], y)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}; lower lr (now {lr})")
        history.append(loss)
    return MlpModel(sizes, ws, bs, history)
