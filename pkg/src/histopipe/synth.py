"""Seeded synthetic slide corpora rendered through a two-stain optical-density model.

Benign slides carry sparse hematoxylin with smooth, low-frequency texture;
tumor slides are hypercellular (dense hematoxylin) with fine, high-frequency
texture. Each slide gets its own perturbed stain matrix and staining
intensity so normalization has real work to do.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy import ndimage

from .pyramid import build_pyramid, save_manifest
from .stain import REFERENCE_HE, od_to_rgb

CORPUS_HEADER = ["slide_id", "manifest", "label"]


def smooth_noise(rng, shape, sigma) -> np.ndarray:
    """Zero-mean, unit-variance Gaussian-filtered white noise."""
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return (f - f.mean()) / (f.std() + 1e-12)


def perturbed_stains(rng, jitter=0.06) -> np.ndarray:
    W = np.clip(REFERENCE_HE + rng.normal(0.0, jitter, size=(3, 2)), 0.01, None)
    return W / np.linalg.norm(W, axis=0)


def two_stain_image(W, H, shape) -> np.ndarray:
    """Render concentrations H (2, N) through stain matrix W (3, 2) to RGB8."""
    od = (np.asarray(W) @ np.asarray(H)).T.reshape(*shape, 3)
    return od_to_rgb(od)


def tissue_region(rng, size) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size] / size
    region = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 3))):
        cy, cx = rng.uniform(0.35, 0.65, size=2)
        ay, ax = rng.uniform(0.22, 0.34, size=2)
        th = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(th) + dy * np.sin(th)
        v = -dx * np.sin(th) + dy * np.cos(th)
        region |= (u / ax) ** 2 + (v / ay) ** 2 <= 1.0
    return region


# (nucleus blob sigma in working-level px, nuclear area fraction)
TEXTURE = {"benign": (3.0, 0.15), "tumor": (0.9, 0.45)}


def tissue_concentrations(rng, label: str, shape) -> np.ndarray:
    """(2, H, W) hematoxylin/eosin concentrations: nuclei over eosin stroma."""
    sigma, frac = TEXTURE[label]
    field = smooth_noise(rng, shape, sigma)
    cut = np.quantile(field, 1.0 - frac)
    nuclei = 1.0 / (1.0 + np.exp(-(field - cut) / 0.12))
    stroma_e = 0.55 + 0.08 * smooth_noise(rng, shape, 4.0)
    h = 0.04 + nuclei * (0.95 + 0.08 * rng.standard_normal(shape))
    e = (1.0 - nuclei) * stroma_e + 0.06
    return np.clip(np.stack([h, e]), 0.0, None)


def render_slide(rng, label: str, size: int, texture_scale: int = 4) -> np.ndarray:
    """Level-0 RGB raster of one slide.

    Texture is generated at ``size // texture_scale`` (the working level) and
    upsampled, so nuclear detail survives box downsampling.
    """
    work = size // texture_scale
    region = tissue_region(rng, size)
    conc = tissue_concentrations(rng, label, (work, work))
    conc = ndimage.zoom(conc, (1, size / work, size / work), order=1, mode="nearest", grid_mode=True)
    conc = conc * rng.uniform(0.8, 1.25) * region[None]
    W = perturbed_stains(rng)
    rgb = two_stain_image(W, conc.reshape(2, -1), (size, size)).astype(np.int16)
    # glass: near-white with faint noise, kept below the tissue OD threshold
    glass = 246 + rng.integers(-3, 4, size=(size, size, 3))
    rgb = np.where(region[..., None], rgb, glass)
    return np.clip(rgb, 0, 255).astype(np.uint8)


def synth_corpus(seed: int, n_slides: int, class_balance: float, out_dir, size: int = 1024,
                 downsamples=(1, 2, 4)) -> Path:
    """Write ``n_slides`` pyramid slides plus ``corpus.csv``; returns the CSV path."""
    if n_slides < 2:
        raise ValueError("n_slides must be >= 2")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_tumor = int(np.clip(round(n_slides * class_balance), 1, n_slides - 1))
    rng = np.random.default_rng(seed)
    labels = ["tumor"] * n_tumor + ["benign"] * (n_slides - n_tumor)
    labels = [labels[i] for i in rng.permutation(n_slides)]
    slide_seeds = rng.integers(0, 2**63 - 1, size=n_slides)
    rows = []
    for i, (label, s) in enumerate(zip(labels, slide_seeds)):
        slide_id = f"slide_{i:03d}"
        base = render_slide(np.random.default_rng(int(s)), label, size, texture_scale=int(downsamples[min(2, len(downsamples) - 1)]))
        manifest = out_dir / "slides" / slide_id / "manifest.json"
        save_manifest(build_pyramid(slide_id, base, downsamples), manifest)
        rows.append(
            {"slide_id": slide_id, "manifest": manifest.relative_to(out_dir).as_posix(), "label": label}
        )
    corpus = out_dir / "corpus.csv"
    with open(corpus, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CORPUS_HEADER, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return corpus


def read_corpus(path) -> list[dict]:
    """Rows of ``slide_id, manifest, label`` with manifest paths made absolute."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CORPUS_HEADER:
            raise ValueError(f"{path}: expected header {CORPUS_HEADER}, got {reader.fieldnames}")
        rows = list(reader)
    for r in rows:
        r["manifest"] = (path.parent / r["manifest"]).resolve()
        if r["label"] not in ("benign", "tumor"):
            raise ValueError(f"{path}: bad label {r['label']!r} for {r['slide_id']}")
    return rows
