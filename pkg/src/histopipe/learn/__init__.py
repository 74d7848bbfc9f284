"""From-scratch classifiers: MLP, random forest, boosted trees, SVM."""

from .mlp import MlpModel, train_mlp
from .pipeline import Pipeline, load_model, make_pipeline, predict, predict_score, save_model
from .svm import SvmModel, rbf_kernel, train_svm
from .trees import ForestModel, GbdtModel, best_gini_split, train_forest, train_gbdt

__all__ = [
    "ForestModel",
    "GbdtModel",
    "MlpModel",
    "Pipeline",
    "SvmModel",
    "best_gini_split",
    "load_model",
    "make_pipeline",
    "predict",
    "predict_score",
    "rbf_kernel",
    "save_model",
    "train_forest",
    "train_gbdt",
    "train_mlp",
    "train_svm",
]
