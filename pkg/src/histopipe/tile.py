"""Patch extraction over a tissue mask, plus lossless rotate/flip/shift augmentation."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DimMismatch, RectOutOfBounds

LABELS = ("benign", "tumor", "unlabeled")


@dataclass(frozen=True)
class Patch:
    slide_id: str
    x: int
    y: int
    size_px: int
    pixels: np.ndarray
    coverage: float
    label: str = "unlabeled"

    def __post_init__(self):
        if self.pixels.shape != (self.size_px, self.size_px, 3):
            raise DimMismatch(
                f"patch pixels {self.pixels.shape} != ({self.size_px}, {self.size_px}, 3)"
            )
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")

    @property
    def name(self) -> str:
        return f"{self.slide_id}_{self.x}_{self.y}"


@dataclass(frozen=True)
class AugmentSpec:
    allow_rot90: bool = True
    allow_hflip: bool = True
    allow_vflip: bool = True
    max_shift_px: int = 0
    seed: int = 0


@dataclass(frozen=True)
class TileParams:
    size_px: int = 256
    stride_px: int = 256
    min_coverage: float = 0.8


def coverage(mask: np.ndarray, x: int, y: int, size_px: int) -> float:
    h, w = mask.shape
    if x < 0 or y < 0 or x + size_px > w or y + size_px > h:
        raise RectOutOfBounds(f"({x}, {y}, {size_px}) outside {w}x{h} mask")
    return float(np.count_nonzero(mask[y : y + size_px, x : x + size_px])) / size_px**2


def extract_patches(
    raster: np.ndarray,
    mask: np.ndarray,
    size_px: int,
    stride_px: int,
    min_coverage: float,
    slide_id: str = "",
    label: str = "unlabeled",
) -> list[Patch]:
    if raster.shape[:2] != mask.shape:
        raise DimMismatch(f"raster {raster.shape[:2]} vs mask {mask.shape}")
    if size_px < 1 or stride_px < 1 or not 0 <= min_coverage <= 1:
        raise ValueError("need size_px >= 1, stride_px >= 1, 0 <= min_coverage <= 1")
    h, w = mask.shape
    if size_px > h or size_px > w:
        return []
    # window sums from an integral image; exact integer counts
    ii = np.zeros((h + 1, w + 1), dtype=np.int64)
    ii[1:, 1:] = np.cumsum(np.cumsum(mask, axis=0, dtype=np.int64), axis=1)
    ys = np.arange(0, h - size_px + 1, stride_px)
    xs = np.arange(0, w - size_px + 1, stride_px)
    sums = (
        ii[np.ix_(ys + size_px, xs + size_px)]
        - ii[np.ix_(ys, xs + size_px)]
        - ii[np.ix_(ys + size_px, xs)]
        + ii[np.ix_(ys, xs)]
    )
    out = []
    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            c = int(sums[iy, ix])
            if c / size_px**2 >= min_coverage:
                out.append(
                    Patch(
                        slide_id=slide_id,
                        x=int(x),
                        y=int(y),
                        size_px=size_px,
                        pixels=raster[y : y + size_px, x : x + size_px].copy(),
                        coverage=c / size_px**2,
                        label=label,
                    )
                )
    return out


def rot90(px: np.ndarray, k: int) -> np.ndarray:
    return np.rot90(px, k % 4, axes=(0, 1))


def hflip(px: np.ndarray) -> np.ndarray:
    return px[:, ::-1]


def vflip(px: np.ndarray) -> np.ndarray:
    return px[::-1, :]


def shift(px: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate content by (dx, dy) pixels, filling the exposed border by reflection."""
    n = px.shape[0]
    if abs(dx) >= n or abs(dy) >= n:
        raise ValueError("shift must be smaller than the patch")
    padded = np.pad(px, ((abs(dy), abs(dy)), (abs(dx), abs(dx)), (0, 0)), mode="symmetric")
    y0, x0 = abs(dy) - dy, abs(dx) - dx
    return padded[y0 : y0 + n, x0 : x0 + n]


def _draw_rng(spec: AugmentSpec, p: Patch, draw_index: int) -> np.random.Generator:
    key = f"{spec.seed}|{p.slide_id}|{p.x}|{p.y}|{draw_index}".encode()
    words = np.frombuffer(hashlib.sha256(key).digest(), dtype=np.uint32)
    return np.random.default_rng(np.random.SeedSequence(words.tolist()))


def augment(p: Patch, spec: AugmentSpec, draw_index: int) -> Patch:
    if not 0 <= spec.max_shift_px < p.size_px:
        raise ValueError(f"max_shift_px must be in [0, {p.size_px})")
    rng = _draw_rng(spec, p, draw_index)
    # draw every choice unconditionally so toggling one option leaves the others unchanged
    k = int(rng.integers(0, 4))
    do_h, do_v = bool(rng.integers(0, 2)), bool(rng.integers(0, 2))
    dx, dy = (int(v) for v in rng.integers(-spec.max_shift_px, spec.max_shift_px + 1, size=2))
    px = p.pixels
    if spec.allow_rot90:
        px = rot90(px, k)
    if spec.allow_hflip and do_h:
        px = hflip(px)
    if spec.allow_vflip and do_v:
        px = vflip(px)
    if spec.max_shift_px:
        px = shift(px, dx, dy)
    return replace(p, pixels=np.ascontiguousarray(px))


MANIFEST_HEADER = ["path", "slide_id", "x", "y", "coverage", "label"]


def write_patches(patches: list[Patch], out_dir, manifest_path) -> list[dict]:
    """Save each patch as ``{slide_id}_{x}_{y}.png`` and write the dataset manifest CSV."""
    from .pyramid import write_png

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = Path(manifest_path)
    rows = []
    for p in patches:
        f = out_dir / f"{p.name}.png"
        write_png(f, p.pixels)
        rows.append(
            {
                "path": f.relative_to(manifest_path.parent).as_posix(),
                "slide_id": p.slide_id,
                "x": p.x,
                "y": p.y,
                "coverage": f"{p.coverage:.6f}",
                "label": p.label,
            }
        )
    write_manifest(manifest_path, rows)
    return rows


def write_manifest(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_HEADER, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_manifest(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise ValueError(f"{path}: expected header {MANIFEST_HEADER}, got {reader.fieldnames}")
        rows = list(reader)
    seen = set()
    for r in rows:
        if r["path"] in seen:
            raise ValueError(f"{path}: duplicate patch path {r['path']}")
        seen.add(r["path"])
        r["x"], r["y"], r["coverage"] = int(r["x"]), int(r["y"]), float(r["coverage"])
    return rows
