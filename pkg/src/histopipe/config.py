"""Pipeline configuration: TOML file -> validated, fully-defaulted dict.

Example::

    seed = 42

    [paths]
    corpus = "corpus/corpus.csv"
    template = "auto"          # image/pyramid manifest, or "auto" = first benign slide
    out = "run"

    [segment]
    sigma = 2.0
    tissue_is_dark = true

    [tile]
    size_px = 32
    stride_px = 32
    min_coverage = 0.8

    [model]
    kind = "svm"
    [model.params]
    kernel = "linear"
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigInvalid

DEFAULTS = {
    "paths": {"corpus": None, "template": None, "out": "out"},
    "pyramid": {"level": None},
    "segment": {"sigma": 2.0, "min_area_px": None, "min_area_frac": 0.005, "tissue_is_dark": True},
    "tile": {
        "size_px": 256,
        "stride_px": 256,
        "min_coverage": 0.8,
        "augment_copies": 0,
        "allow_rot90": True,
        "allow_hflip": True,
        "allow_vflip": True,
        "max_shift_px": 0,
    },
    "stain": {
        "enabled": True,
        "lambda": 0.1,
        "iters": 200,
        "tol": 1e-6,
        "bg_od_threshold": 0.15,
        "max_pixels": 50_000,
        "normalize_lambda": 0.01,
    },
    "features": {"standardize": True, "pca": False, "pca_k": 300},
    "model": {"kind": "svm", "params": {}},
    "eval": {"test_frac": 0.2, "k_folds": 5, "threshold": 0.5},
}

MODEL_DEFAULTS = {
    "svm": {"kernel": "linear", "C": 1.0, "gamma": None, "epochs": 50},
    "forest": {"n_trees": 100, "max_depth": None, "min_samples_split": 2},
    "gbdt": {"n_rounds": 100, "max_depth": 6, "lr": 0.3, "reg_lambda": 1.0},
    "mlp": {"arch": [64, 32], "epochs": 100, "lr": 0.01, "batch": 32},
}


def _merge(base: dict, over: dict, where="") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigInvalid(f"unknown config key {where}{k}")
        if isinstance(base[k], dict) and k != "params":
            if not isinstance(v, dict):
                raise ConfigInvalid(f"{where}{k} must be a table")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def parse_value(text: str):
    """Parse a ``--set`` value as a TOML scalar, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(raw: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = raw
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Read TOML (if given), apply dotted overrides, fill defaults, validate."""
    raw: dict = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigInvalid(f"config file not found: {path}")
        try:
            raw = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as e:
            raise ConfigInvalid(f"{path}: {e}") from e
        base_dir = path.parent.resolve()
    for k, v in (overrides or {}).items():
        if v is not None:
            apply_override(raw, k, v)
    return resolve(raw, base_dir)


def resolve(raw: dict, base_dir) -> dict:
    raw = copy.deepcopy(raw)
    seed = raw.pop("seed", None)
    if seed is None:
        raise ConfigInvalid("seed is required (no implicit entropy)")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigInvalid(f"seed must be a non-negative integer, got {seed!r}")
    cfg = _merge(DEFAULTS, raw)
    cfg["seed"] = seed
    base_dir = Path(base_dir)
    paths = cfg["paths"]
    for key in ("corpus", "out"):
        if paths[key] is not None:
            paths[key] = str((base_dir / paths[key]).resolve())
    if paths["template"] not in (None, "auto"):
        paths["template"] = str((base_dir / paths["template"]).resolve())
    kind = cfg["model"]["kind"]
    if kind not in MODEL_DEFAULTS:
        raise ConfigInvalid(f"model.kind must be one of {sorted(MODEL_DEFAULTS)}, got {kind!r}")
    unknown = set(cfg["model"]["params"]) - set(MODEL_DEFAULTS[kind])
    if unknown:
        raise ConfigInvalid(f"unknown model.params for {kind}: {sorted(unknown)}")
    cfg["model"]["params"] = {**MODEL_DEFAULTS[kind], **cfg["model"]["params"]}
    validate(cfg)
    return cfg


def validate(cfg: dict, need_corpus: bool = True) -> None:
    s, t, st, e = cfg["segment"], cfg["tile"], cfg["stain"], cfg["eval"]
    checks = [
        (s["sigma"] >= 0, "segment.sigma must be >= 0"),
        (t["size_px"] >= 1 and t["stride_px"] >= 1, "tile.size_px and tile.stride_px must be >= 1"),
        (0 <= t["min_coverage"] <= 1, "tile.min_coverage must be in [0, 1]"),
        (0 <= t["max_shift_px"] < t["size_px"], "tile.max_shift_px must be in [0, size_px)"),
        (t["augment_copies"] >= 0, "tile.augment_copies must be >= 0"),
        (st["lambda"] > 0, "stain.lambda must be > 0"),
        (st["iters"] >= 1, "stain.iters must be >= 1"),
        (0 <= e["test_frac"] < 1, "eval.test_frac must be in [0, 1)"),
        (e["k_folds"] == 0 or e["k_folds"] >= 2, "eval.k_folds must be 0 (off) or >= 2"),
        (cfg["features"]["pca_k"] >= 1, "features.pca_k must be >= 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigInvalid(msg)
    paths = cfg["paths"]
    if need_corpus:
        if paths["corpus"] is None:
            raise ConfigInvalid("paths.corpus is required")
        if not Path(paths["corpus"]).is_file():
            raise ConfigInvalid(f"paths.corpus does not exist: {paths['corpus']}")
    if st["enabled"]:
        if paths["template"] is None:
            raise ConfigInvalid("paths.template is required when stain normalization is enabled "
                                '(a file path, or "auto" for the first benign slide)')
        if paths["template"] != "auto" and not Path(paths["template"]).is_file():
            raise ConfigInvalid(f"paths.template does not exist: {paths['template']}")


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical config, excluding the output directory."""
    c = copy.deepcopy(cfg)
    c["paths"].pop("out", None)
    blob = json.dumps(c, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
