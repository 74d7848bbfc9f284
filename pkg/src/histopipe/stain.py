"""Sparse non-negative stain separation and template-based color normalization.

Pixels are mapped to optical density (OD), an OD matrix V (3 x N) is
factored as V ~ W H with W >= 0 (unit-norm stain colors) and H >= 0 sparse
(per-pixel stain concentrations), and images are re-rendered with a target
stain matrix after matching each stain's 99th-percentile concentration.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyInput, InsufficientTissue

log = logging.getLogger(__name__)

OD_MAX = float(np.log(256.0))
MIN_FOREGROUND = 100
EPS = 1e-8
# inner coordinate-descent budget per H-step; warm starts carry progress across steps
FIT_SWEEPS = 20
FIT_TOL = 1e-7

# Reference H&E color vectors in OD space (columns: hematoxylin, eosin).
REFERENCE_HE = np.array([[0.65, 0.07], [0.70, 0.99], [0.29, 0.11]])
REFERENCE_HE = REFERENCE_HE / np.linalg.norm(REFERENCE_HE, axis=0)


@dataclass(frozen=True)
class StainParams:
    lambda_: float = 0.1
    iters: int = 200
    tol: float = 1e-6
    bg_od_threshold: float = 0.15
    max_pixels: int = 50_000
    seed: int = 0
    # sparsity used when re-rendering pixels with a fitted model
    normalize_lambda: float = 0.01


@dataclass
class StainModel:
    W: np.ndarray  # (3, 2), columns = stain colors in OD space
    max_c: np.ndarray  # (2,)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "W": [float(v) for v in self.W.ravel(order="F")],
            "max_c": [float(v) for v in self.max_c],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StainModel":
        W = np.asarray(d["W"], dtype=np.float64).reshape((3, 2), order="F")
        return cls(W=W, max_c=np.asarray(d["max_c"], dtype=np.float64), meta=dict(d.get("meta", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "StainModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def rgb_to_od(raster: np.ndarray) -> np.ndarray:
    """Per-channel optical density ``-ln((I + 1) / 256)``; same shape as input."""
    return -np.log((np.asarray(raster, dtype=np.float64) + 1.0) / 256.0)


def od_to_rgb(od: np.ndarray) -> np.ndarray:
    i = 256.0 * np.exp(-np.asarray(od, dtype=np.float64)) - 1.0
    return np.clip(np.rint(i), 0, 255).astype(np.uint8)


def percentile(values, p: float) -> float:
    """Linear interpolation between order statistics at rank ``p/100 * (n-1)``."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise EmptyInput("percentile of an empty sequence")
    if not 0 <= p <= 100:
        raise ValueError(f"p must be in [0, 100], got {p}")
    r = p / 100.0 * (v.size - 1)
    lo = int(np.floor(r))
    hi = min(lo + 1, v.size - 1)
    return float(v[lo] + (r - lo) * (v[hi] - v[lo]))


def _lasso_cd(W: np.ndarray, V: np.ndarray, lam: float, H0=None, max_sweeps=500, tol=1e-12):
    """Nonnegative lasso per column of V by cyclic coordinate descent.

    Minimizes ||v - W h||^2 + lam * sum(h) over h >= 0 for every column v,
    all columns updated together. Each coordinate step is an exact minimizer,
    so the objective never increases.
    """
    G = W.T @ W
    B = W.T @ V
    k = W.shape[1]
    H = np.zeros((k, V.shape[1])) if H0 is None else H0.copy()
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(k):
            if G[j, j] <= 0:
                H[j] = 0.0
                continue
            rest = G[j] @ H - G[j, j] * H[j]
            new = np.maximum(0.0, (B[j] - rest - lam / 2.0) / G[j, j])
            delta = max(delta, float(np.max(np.abs(new - H[j]), initial=0.0)))
            H[j] = new
        if delta <= tol:
            break
    return H


def objective(V, W, H, lam) -> float:
    R = V - W @ H
    return float(np.sum(R * R) + lam * np.sum(H))


def _project_columns(W: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    W = np.maximum(W, 0.0)
    norms = np.linalg.norm(W, axis=0)
    out = fallback.copy()
    ok = norms > EPS
    out[:, ok] = W[:, ok] / norms[ok]
    return out


def _w_step(V, W, H, inner=5):
    """Projected gradient on ||V - W H||^2 over non-negative unit-norm columns.

    A step is kept only if it lowers the fit, so the objective is monotone.
    """
    HHt = H @ H.T
    VHt = V @ H.T
    L = 2.0 * float(np.linalg.norm(HHt, 2))
    if L <= 0:
        return W
    fit = lambda M: float(np.sum((V - M @ H) ** 2))
    cur = fit(W)
    for _ in range(inner):
        grad = 2.0 * (W @ HHt - VHt)
        step = 1.0 / L
        for _ in range(30):
            cand = _project_columns(W - step * grad, W)
            f = fit(cand)
            if f < cur:
                W, cur = cand, f
                break
            step /= 2.0
        else:
            break
    return W


def canonical_order(W: np.ndarray, H: np.ndarray | None = None):
    """Hematoxylin-like column (larger blue-channel OD) first."""
    if W[2, 0] < W[2, 1]:
        W = W[:, ::-1].copy()
        if H is not None:
            H = H[::-1].copy()
    return W, H


def foreground_od(raster: np.ndarray, bg_od_threshold: float) -> np.ndarray:
    od = rgb_to_od(raster).reshape(-1, 3)
    return od[np.linalg.norm(od, axis=1) >= bg_od_threshold]


def fit_stain_model(raster: np.ndarray, params: StainParams | None = None) -> StainModel:
    params = params or StainParams()
    od = foreground_od(raster, params.bg_od_threshold)
    if od.shape[0] < MIN_FOREGROUND:
        raise InsufficientTissue(
            f"{od.shape[0]} foreground pixels (< {MIN_FOREGROUND}) above OD {params.bg_od_threshold}"
        )
    rng = np.random.default_rng(params.seed)
    if od.shape[0] > params.max_pixels:
        idx = np.sort(rng.choice(od.shape[0], size=params.max_pixels, replace=False))
        od = od[idx]
    V = od.T
    lam = params.lambda_

    W = _project_columns(REFERENCE_HE + rng.uniform(-0.05, 0.05, size=(3, 2)), REFERENCE_HE)
    H = _lasso_cd(W, V, lam, max_sweeps=FIT_SWEEPS, tol=FIT_TOL)
    trace = [objective(V, W, H, lam)]
    converged = False
    for _ in range(params.iters):
        W = _w_step(V, W, H)
        H = _lasso_cd(W, V, lam, H0=H, max_sweeps=FIT_SWEEPS, tol=FIT_TOL)
        f = objective(V, W, H, lam)
        prev = trace[-1]
        trace.append(f)
        if prev - f < params.tol * max(abs(prev), EPS):
            converged = True
            break
    W, H = canonical_order(W, H)
    max_c = np.array([percentile(H[i], 99) for i in range(2)])
    if not converged:
        log.warning("stain fit stopped after %d iterations without converging", params.iters)
    return StainModel(
        W=W,
        max_c=max_c,
        meta={
            "lambda": lam,
            "iters_run": len(trace) - 1,
            "converged": converged,
            "objective": trace,
        },
    )


def concentrations(raster: np.ndarray, W: np.ndarray, lam: float = 0.01) -> np.ndarray:
    """(2, N) nonnegative stain concentrations of every pixel given stain matrix W."""
    V = rgb_to_od(raster).reshape(-1, 3).T
    return _lasso_cd(np.asarray(W, dtype=np.float64), V, lam)


def normalize_stain(
    raster: np.ndarray, source: StainModel, target: StainModel, lam: float = 0.01
) -> np.ndarray:
    raster = np.asarray(raster)
    H = concentrations(raster, source.W, lam)
    scale = target.max_c / np.maximum(source.max_c, EPS)
    od = (target.W @ (H * scale[:, None])).T
    return od_to_rgb(od).reshape(raster.shape)


def column_angles(W_est: np.ndarray, W_ref: np.ndarray) -> np.ndarray:
    """Angle in radians between each reference column and its best-matching estimate."""
    a = W_est / np.linalg.norm(W_est, axis=0)
    b = W_ref / np.linalg.norm(W_ref, axis=0)
    cos = np.clip(a.T @ b, -1.0, 1.0)
    direct = np.arccos(np.diag(cos))
    swapped = np.arccos(np.diag(cos[::-1]))
    return direct if direct.sum() <= swapped.sum() else swapped
