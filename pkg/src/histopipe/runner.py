"""Pipeline stages. Each stage reads the previous stage's artifacts from the output dir.

Output layout::

    out/
      segment.json                 per-slide level, threshold, tissue pixels
      masks/{slide}_mask.png       1-bit tissue masks
      masks/{slide}_components.csv
      raw_manifest.csv             patches/raw/{slide}_{x}_{y}.png
      stain/target.json, stain/{slide}.json
      manifest.csv                 patches used downstream (normalized if enabled)
      features.npz
      split.json, cv.json, model.json
      report.json, roc.csv, history.csv
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .config import config_hash
from .errors import CorpusEmpty, MissingInput, PipelineError, StageError
from .features import patch_to_features
from .learn import load_model, make_pipeline, predict_score, save_model
from .pyramid import load_pyramid, read_level, read_png_rgb, working_level, write_png
from .segment import SegmentParams, build_mask, write_components_csv
from .stain import StainModel, StainParams, fit_stain_model, normalize_stain
from .synth import read_corpus
from .tile import AugmentSpec, Patch, augment, extract_patches, read_manifest, write_manifest, write_patches

log = logging.getLogger(__name__)

LABEL_VALUE = {"benign": 0, "tumor": 1}
STAGES = ("segment", "tile", "normalize", "featurize", "train", "evaluate")


class StageFailed(StageError):
    def __init__(self, stage: str, err: Exception):
        super().__init__(f"[{stage}] {type(err).__name__}: {err}")
        self.stage = stage
        self.cause = err


def _out(cfg) -> Path:
    p = Path(cfg["paths"]["out"])
    p.mkdir(parents=True, exist_ok=True)
    return p


def _corpus(cfg) -> list[dict]:
    rows = read_corpus(cfg["paths"]["corpus"])
    if not rows:
        raise CorpusEmpty(f"corpus {cfg['paths']['corpus']} lists no slides")
    return rows


def _dump(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _slide_raster(cfg, row):
    p = load_pyramid(row["manifest"])
    lvl = working_level(p, cfg["pyramid"]["level"])
    return read_level(p, lvl), lvl


def run_segment(cfg) -> dict:
    out = _out(cfg)
    (out / "masks").mkdir(exist_ok=True)
    s = cfg["segment"]
    params = SegmentParams(
        sigma=s["sigma"],
        min_area_px=s["min_area_px"],
        tissue_is_dark=s["tissue_is_dark"],
        min_area_frac=s["min_area_frac"],
    )
    summary = {}
    for row in _corpus(cfg):
        raster, lvl = _slide_raster(cfg, row)
        sid = row["slide_id"]
        try:
            mask, comps = build_mask(raster, params)
        except PipelineError as e:
            log.warning("%s: no tissue found (%s)", sid, e)
            mask, comps = np.zeros(raster.shape[:2], dtype=bool), []
        write_png(out / "masks" / f"{sid}_mask.png", mask)
        write_components_csv(out / "masks" / f"{sid}_components.csv", comps)
        summary[sid] = {
            "level": lvl,
            "tissue_px": int(mask.sum()),
            "n_components": len(comps),
        }
    _dump(out / "segment.json", summary)
    return summary


def _read_mask(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("1"), dtype=bool)


def run_tile(cfg) -> list[dict]:
    out = _out(cfg)
    t = cfg["tile"]
    patches = []
    for row in _corpus(cfg):
        sid = row["slide_id"]
        mpath = out / "masks" / f"{sid}_mask.png"
        if not mpath.is_file():
            raise MissingInput(f"mask for {sid} not found; run the segment stage first")
        raster, _ = _slide_raster(cfg, row)
        patches += extract_patches(
            raster, _read_mask(mpath), t["size_px"], t["stride_px"], t["min_coverage"],
            slide_id=sid, label=row["label"],
        )
    if not patches:
        raise CorpusEmpty("no patches passed the coverage threshold")
    return write_patches(patches, out / "patches" / "raw", out / "raw_manifest.csv")


def _stain_params(cfg) -> StainParams:
    st = cfg["stain"]
    return StainParams(
        lambda_=st["lambda"],
        iters=st["iters"],
        tol=st["tol"],
        bg_od_threshold=st["bg_od_threshold"],
        max_pixels=st["max_pixels"],
        seed=cfg["seed"],
        normalize_lambda=st["normalize_lambda"],
    )


def _template_raster(cfg, corpus):
    tpl = cfg["paths"]["template"]
    if tpl == "auto":
        benign = [r for r in corpus if r["label"] == "benign"]
        if not benign:
            raise MissingInput('template "auto" needs at least one benign slide')
        log.warning("no stain template given; using first benign slide %s", benign[0]["slide_id"])
        return _slide_raster(cfg, benign[0])[0], benign[0]["slide_id"]
    if tpl.endswith(".json"):
        p = load_pyramid(tpl)
        return read_level(p, working_level(p, cfg["pyramid"]["level"])), p.slide_id
    return read_png_rgb(tpl), Path(tpl).name


def run_normalize(cfg) -> list[dict]:
    out = _out(cfg)
    raw_manifest = out / "raw_manifest.csv"
    if not raw_manifest.is_file():
        raise MissingInput("raw_manifest.csv not found; run the tile stage first")
    rows = read_manifest(raw_manifest)
    if not cfg["stain"]["enabled"]:
        write_manifest(out / "manifest.csv", rows)
        return rows
    corpus = _corpus(cfg)
    params = _stain_params(cfg)
    (out / "stain").mkdir(exist_ok=True)
    tpl_raster, tpl_name = _template_raster(cfg, corpus)
    target = fit_stain_model(tpl_raster, params)
    target.meta["template"] = tpl_name
    target.save(out / "stain" / "target.json")
    sources = {}
    for row in corpus:
        sid = row["slide_id"]
        sources[sid] = fit_stain_model(_slide_raster(cfg, row)[0], params)
        sources[sid].save(out / "stain" / f"{sid}.json")
    norm_dir = out / "patches" / "norm"
    norm_dir.mkdir(parents=True, exist_ok=True)
    new_rows = []
    for r in rows:
        px = read_png_rgb(out / r["path"])
        normed = normalize_stain(px, sources[r["slide_id"]], target, params.normalize_lambda)
        f = norm_dir / Path(r["path"]).name
        write_png(f, normed)
        new_rows.append({**r, "path": f.relative_to(out).as_posix(), "coverage": f"{r['coverage']:.6f}"})
    write_manifest(out / "manifest.csv", new_rows)
    return new_rows


def run_featurize(cfg) -> dict:
    out = _out(cfg)
    manifest = out / "manifest.csv"
    if not manifest.is_file():
        raise MissingInput("manifest.csv not found; run the normalize stage first")
    rows = read_manifest(manifest)
    if not rows:
        raise CorpusEmpty("patch manifest is empty")
    X = np.stack([patch_to_features(read_png_rgb(out / r["path"])) for r in rows])
    y = np.array([LABEL_VALUE[r["label"]] for r in rows], dtype=np.int64)
    np.savez(
        out / "features.npz",
        X=X,
        y=y,
        slide_id=np.array([r["slide_id"] for r in rows]),
        xy=np.array([[r["x"], r["y"]] for r in rows], dtype=np.int64),
    )
    return {"n": int(X.shape[0]), "d": int(X.shape[1])}


def _load_features(out):
    f = out / "features.npz"
    if not f.is_file():
        raise MissingInput("features.npz not found; run the featurize stage first")
    with np.load(f) as z:
        return z["X"], z["y"], z["slide_id"], z["xy"]


def _stages(cfg) -> list:
    fe = cfg["features"]
    stages = []
    if fe["standardize"]:
        stages.append("scaler")
    if fe["pca"]:
        stages.append(("pca", {"k": fe["pca_k"]}))
    stages.append((cfg["model"]["kind"], cfg["model"]["params"]))
    return stages


def _augmented(cfg, X, y, sids, xy, seed):
    t = cfg["tile"]
    copies = t["augment_copies"]
    if not copies:
        return X, y
    size = t["size_px"]
    spec = AugmentSpec(t["allow_rot90"], t["allow_hflip"], t["allow_vflip"], t["max_shift_px"], seed)
    extra_X, extra_y = [], []
    for row, label, sid, (px, py) in zip(X, y, sids, xy):
        pixels = np.rint(row.reshape(size, size, 3) * 255).astype(np.uint8)
        p = Patch(str(sid), int(px), int(py), size, pixels, 1.0)
        for draw in range(1, copies + 1):
            extra_X.append(patch_to_features(augment(p, spec, draw)))
            extra_y.append(label)
    return np.vstack([X, np.array(extra_X)]), np.concatenate([y, extra_y])


def _fit(cfg, X, y, sids, xy, seed):
    Xa, ya = _augmented(cfg, X, y, sids, xy, seed)
    return make_pipeline(_stages(cfg)).fit(Xa, ya, seed=seed)


def _fold_seed(seed: int, fold: int) -> int:
    return (seed * 1_000_003 + fold + 1) % (2**63)


def _metric_dict(report: ev.EvalReport) -> dict:
    d = report.to_dict()
    d.pop("per_fold")
    d.pop("metadata")
    return d


def run_train(cfg) -> dict:
    out = _out(cfg)
    X, y, sids, xy = _load_features(out)
    seed, e = cfg["seed"], cfg["eval"]
    train_idx, test_idx = ev.stratified_split(y, e["test_frac"], seed)
    _dump(out / "split.json", {"train": train_idx.tolist(), "test": test_idx.tolist()})
    folds = []
    if e["k_folds"]:
        ytr = y[train_idx]
        for i, val in enumerate(ev.kfold(len(train_idx), e["k_folds"], seed, stratify_labels=ytr)):
            fit_rows = train_idx[np.setdiff1d(np.arange(len(train_idx)), val)]
            val_rows = train_idx[val]
            if len(np.unique(y[fit_rows])) < 2:
                raise StageError(f"fold {i} training rows hold a single class")
            m = _fit(cfg, X[fit_rows], y[fit_rows], sids[fit_rows], xy[fit_rows], _fold_seed(seed, i))
            rep, _ = ev.evaluate_scores(y[val_rows], predict_score(m, X[val_rows]), e["threshold"])
            folds.append({"fold": i, "n_val": int(len(val_rows)), **_metric_dict(rep)})
    _dump(out / "cv.json", {"folds": folds})
    model = _fit(cfg, X[train_idx], y[train_idx], sids[train_idx], xy[train_idx], seed)
    save_model(model, out / "model.json", {"config_hash": config_hash(cfg), "seed": seed})
    return {"n_train": int(len(train_idx)), "n_test": int(len(test_idx)), "folds": folds}


def _history(model):
    clf = model.classifier if hasattr(model, "classifier") else model
    return list(getattr(clf, "loss_history", []) or [])


def run_evaluate(cfg) -> dict:
    out = _out(cfg)
    X, y, _, _ = _load_features(out)
    for f in ("split.json", "model.json"):
        if not (out / f).is_file():
            raise MissingInput(f"{f} not found; run the train stage first")
    split = json.loads((out / "split.json").read_text())
    test_idx = np.asarray(split["test"], dtype=np.int64)
    model, doc = load_model(out / "model.json")
    cv = json.loads((out / "cv.json").read_text()) if (out / "cv.json").is_file() else {"folds": []}
    e = cfg["eval"]
    scores = predict_score(model, X[test_idx]) if len(test_idx) else np.array([])
    report, curve = ev.evaluate_scores(
        y[test_idx],
        scores,
        e["threshold"],
        metadata={
            "model_id": cfg["model"]["kind"],
            "model_params": cfg["model"]["params"],
            "seed": cfg["seed"],
            "config_hash": config_hash(cfg),
            "n_train": len(split["train"]),
            "n_test": int(len(test_idx)),
            "class_counts": {"benign": int((y == 0).sum()), "tumor": int((y == 1).sum())},
        },
    )
    report.per_fold = cv["folds"]
    payload = report.to_dict()
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    doc = {"payload": payload, "payload_sha256": hashlib.sha256(blob.encode()).hexdigest()}
    _dump(out / "report.json", doc)
    if curve is not None:
        ev.write_roc_csv(out / "roc.csv", curve)
    hist = _history(model)
    if hist:
        with open(out / "history.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "train_loss"])
            w.writerows([i, repr(v)] for i, v in enumerate(hist))
    return doc


RUNNERS = {
    "segment": run_segment,
    "tile": run_tile,
    "normalize": run_normalize,
    "featurize": run_featurize,
    "train": run_train,
    "evaluate": run_evaluate,
}


def run_stage(name: str, cfg):
    try:
        return RUNNERS[name](cfg)
    except (StageFailed, MissingInput):
        raise
    except (PipelineError, ValueError, ArithmeticError) as err:
        raise StageFailed(name, err) from err


def run_pipeline(cfg) -> dict:
    """Run every stage in order and return the report document."""
    result = None
    for name in STAGES:
        log.info("stage %s", name)
        result = run_stage(name, cfg)
    return result
