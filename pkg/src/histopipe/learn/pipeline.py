"""Model registry, scoring helpers, composable pipelines and JSON model files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DimMismatch, StageDimMismatch
from ..features import PcaModel, Scaler, clamp_k, fit_pca, fit_scaler
from .mlp import MlpModel, train_mlp
from .svm import SvmModel, train_svm
from .trees import ForestModel, GbdtModel, train_forest, train_gbdt

MODEL_FORMAT = "histopipe-model"
MODEL_VERSION = 1

CLASSIFIERS = {
    "mlp": (train_mlp, MlpModel),
    "forest": (train_forest, ForestModel),
    "gbdt": (train_gbdt, GbdtModel),
    "svm": (train_svm, SvmModel),
}
TRANSFORMS = ("scaler", "pca")


def predict_score(model, X) -> np.ndarray:
    """Scores in [0, 1], monotone in each model's raw decision value."""
    return np.clip(model.predict_score(X), 0.0, 1.0)


def predict(model, X, threshold: float = 0.5) -> np.ndarray:
    return (predict_score(model, X) >= threshold).astype(np.int64)


@dataclass
class Pipeline:
    stages: list[tuple[str, dict]]
    fitted: list = field(default_factory=list)

    kind = "pipeline"

    @property
    def classifier(self):
        return self.fitted[-1] if self.fitted else None

    def fit(self, X, y, seed: int = 0) -> "Pipeline":
        X = np.asarray(X, dtype=np.float64)
        fitted = []
        for name, params in self.stages:
            if name == "scaler":
                st = fit_scaler(X)
            elif name == "pca":
                k = clamp_k(int(params.get("k", 300)), *X.shape)
                st = fit_pca(X, k)
            else:
                train, _ = CLASSIFIERS[name]
                fitted.append(train(X, y, seed=seed, **params))
                break
            X = st.transform(X)
            fitted.append(st)
        self.fitted = fitted
        return self

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        for st in self.fitted[:-1]:
            try:
                X = st.transform(X)
            except DimMismatch as e:
                raise StageDimMismatch(str(e)) from e
        return X

    def predict_score(self, X) -> np.ndarray:
        Z = self.transform(X)
        try:
            return self.classifier.predict_score(Z)
        except DimMismatch as e:
            raise StageDimMismatch(str(e)) from e

    def to_dict(self) -> dict:
        out = []
        for (name, params), st in zip(self.stages, self.fitted):
            out.append({"stage": name, "params": params, "state": st.to_dict()})
        return {"stages": out}

    @classmethod
    def from_dict(cls, d) -> "Pipeline":
        stages, fitted = [], []
        for s in d["stages"]:
            stages.append((s["stage"], s["params"]))
            if s["stage"] == "scaler":
                fitted.append(Scaler.from_dict(s["state"]))
            elif s["stage"] == "pca":
                fitted.append(PcaModel.from_dict(s["state"]))
            else:
                fitted.append(CLASSIFIERS[s["stage"]][1].from_dict(s["state"]))
        return cls(stages, fitted)


def make_pipeline(stages) -> Pipeline:
    """Validate an ordered stage list: transforms first, exactly one terminal classifier.

    Each stage is a name (``"scaler"``, ``"pca"``, ``"svm"``...) or a
    ``(name, params)`` pair.
    """
    norm = []
    for s in stages:
        name, params = (s, {}) if isinstance(s, str) else (s[0], dict(s[1]))
        if name not in TRANSFORMS and name not in CLASSIFIERS:
            raise StageDimMismatch(f"unknown stage {name!r}")
        norm.append((name, params))
    kinds = [n for n, _ in norm]
    n_cls = sum(k in CLASSIFIERS for k in kinds)
    if n_cls != 1 or kinds[-1] not in CLASSIFIERS:
        raise StageDimMismatch(f"pipeline needs exactly one terminal classifier, got {kinds}")
    return Pipeline(norm)


def save_model(model, path, extra: dict | None = None) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind,
        "model": model.to_dict(),
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc) + "\n")


def load_model(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: not a version-{MODEL_VERSION} {MODEL_FORMAT} file")
    kind = doc["kind"]
    if kind == "pipeline":
        return Pipeline.from_dict(doc["model"]), doc
    return CLASSIFIERS[kind][1].from_dict(doc["model"]), doc
