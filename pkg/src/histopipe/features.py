"""Patch featurization, standardization and exact PCA."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData, DimMismatch, KTooLarge, TooFewSamples

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


def patch_to_features(p) -> np.ndarray:
    """Row-major, channel-interleaved RGB bytes scaled to [0, 1]."""
    px = p.pixels if hasattr(p, "pixels") else np.asarray(p)
    return px.reshape(-1).astype(np.float64) / 255.0


def stack_features(patches) -> np.ndarray:
    return np.stack([patch_to_features(p) for p in patches])


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.mean.shape[0]:
            raise DimMismatch(f"expected {self.mean.shape[0]} features, got {X.shape[1]}")
        return (X - self.mean) / self.std

    def to_dict(self):
        return {"kind": "scaler", "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]))


def fit_scaler(X) -> Scaler:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise TooFewSamples("scaler needs at least 2 rows")
    return Scaler(mean=X.mean(axis=0), std=np.maximum(X.std(axis=0), STD_FLOOR))


def apply_scaler(X, scaler: Scaler) -> np.ndarray:
    return scaler.transform(X)


@dataclass
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray  # (k,), descending

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def d(self) -> int:
        return self.components.shape[1]

    def transform(self, X):
        return transform(self, X)

    def to_dict(self):
        return {
            "kind": "pca",
            "k": self.k,
            "d": self.d,
            "mean": self.mean.tolist(),
            "components": self.components.ravel().tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        comps = np.asarray(d["components"], dtype=np.float64).reshape(d["k"], d["d"])
        return cls(np.asarray(d["mean"]), comps, np.asarray(d["explained_variance"]))


def clamp_k(k: int, n: int, d: int) -> int:
    limit = min(n - 1, d)
    if k > limit:
        log.warning("PCA k=%d exceeds min(n-1, d)=%d; clamping", k, limit)
        return limit
    return k


def fit_pca(X, k: int) -> PcaModel:
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if not 1 <= k <= min(n - 1, d):
        raise KTooLarge(f"k={k} not in [1, min(n-1, d)={min(n - 1, d)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    if not np.any(Xc):
        raise DegenerateData("all rows are identical")
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = vt[:k].copy()
    # sign convention: largest-magnitude entry of each axis is positive
    pivots = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivots])
    comps *= signs[:, None]
    return PcaModel(mean=mean, components=comps, explained_variance=s[:k] ** 2 / (n - 1))


def transform(m: PcaModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != m.d:
        raise DimMismatch(f"expected {m.d} features, got {X.shape[-1]}")
    return (X - m.mean) @ m.components.T


def inverse_transform(m: PcaModel, Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape[-1] != m.k:
        raise DimMismatch(f"expected {m.k} components, got {Y.shape[-1]}")
    return Y @ m.components + m.mean
