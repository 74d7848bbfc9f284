"""Multi-resolution slide images backed by a JSON manifest over PNG levels.

Manifest layout (paths relative to the manifest's directory)::

    {
      "slide_id": "slide_000",
      "levels": [
        {"index": 0, "file": "slide_000_L0.png", "width": 1024, "height": 1024, "downsample": 1.0},
        {"index": 1, "file": "slide_000_L1.png", "width": 512, "height": 512, "downsample": 2.0}
      ]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    DimensionMismatch,
    LevelOutOfRange,
    MissingLevelFile,
    NonMonotonicDownsample,
)

DEFAULT_WORKING_LEVEL = 2


@dataclass(frozen=True)
class Level:
    index: int
    width_px: int
    height_px: int
    downsample: float
    raster: np.ndarray = field(repr=False, compare=False)
    file: str | None = None


@dataclass(frozen=True)
class PyramidImage:
    slide_id: str
    levels: tuple[Level, ...]

    def __post_init__(self):
        _check_levels(self.levels)
        for lvl in self.levels:
            lvl.raster.setflags(write=False)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def metadata(self) -> dict:
        return {
            "slide_id": self.slide_id,
            "levels": [
                {
                    "index": lvl.index,
                    "file": lvl.file,
                    "width": lvl.width_px,
                    "height": lvl.height_px,
                    "downsample": lvl.downsample,
                }
                for lvl in self.levels
            ],
        }


def _check_levels(levels) -> None:
    if not levels:
        raise MissingLevelFile("pyramid has no levels")
    if levels[0].downsample != 1.0:
        raise NonMonotonicDownsample(
            f"level 0 downsample must be 1.0, got {levels[0].downsample}"
        )
    base_w, base_h = levels[0].width_px, levels[0].height_px
    prev = None
    for i, lvl in enumerate(levels):
        if lvl.index != i:
            raise NonMonotonicDownsample(f"level indices must be 0..n-1, got {lvl.index} at {i}")
        if prev is not None and not lvl.downsample > prev:
            raise NonMonotonicDownsample(
                f"downsample must strictly increase: level {i} has {lvl.downsample} after {prev}"
            )
        prev = lvl.downsample
        if (
            abs(lvl.width_px - round(base_w / lvl.downsample)) > 1
            or abs(lvl.height_px - round(base_h / lvl.downsample)) > 1
        ):
            raise DimensionMismatch(
                f"level {i} is {lvl.width_px}x{lvl.height_px}, inconsistent with "
                f"level 0 {base_w}x{base_h} at downsample {lvl.downsample}"
            )
        if lvl.raster.shape != (lvl.height_px, lvl.width_px, 3) or lvl.raster.dtype != np.uint8:
            raise DimensionMismatch(
                f"level {i} raster has shape {lvl.raster.shape} {lvl.raster.dtype}, "
                f"expected ({lvl.height_px}, {lvl.width_px}, 3) uint8"
            )


def read_png_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_png(path, arr: np.ndarray) -> None:
    if arr.dtype == bool:
        Image.fromarray(arr).convert("1").save(path, optimize=False)
    else:
        Image.fromarray(arr).save(path, optimize=False)


def load_pyramid(manifest_path) -> PyramidImage:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingLevelFile(f"manifest not found: {manifest_path}")
    meta = json.loads(manifest_path.read_text())
    entries = sorted(meta.get("levels", []), key=lambda e: e["index"])
    if not entries:
        raise MissingLevelFile(f"{manifest_path} lists no levels")
    root = manifest_path.parent
    levels = []
    for e in entries:
        f = root / e["file"]
        if not f.is_file():
            raise MissingLevelFile(f"level {e['index']} file missing: {f}")
        raster = read_png_rgb(f)
        h, w = raster.shape[:2]
        if (w, h) != (int(e["width"]), int(e["height"])):
            raise DimensionMismatch(
                f"{f.name}: manifest declares {e['width']}x{e['height']}, decoded {w}x{h}"
            )
        levels.append(
            Level(
                index=int(e["index"]),
                width_px=w,
                height_px=h,
                downsample=float(e["downsample"]),
                raster=raster,
                file=e["file"],
            )
        )
    return PyramidImage(slide_id=str(meta["slide_id"]), levels=tuple(levels))


def save_manifest(p: PyramidImage, manifest_path) -> Path:
    """Write PNG level files next to ``manifest_path`` and the manifest itself."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    for lvl in p.levels:
        fname = lvl.file or f"{p.slide_id}_L{lvl.index}.png"
        write_png(manifest_path.parent / fname, lvl.raster)
        entries.append(
            {
                "index": lvl.index,
                "file": fname,
                "width": lvl.width_px,
                "height": lvl.height_px,
                "downsample": lvl.downsample,
            }
        )
    doc = {"slide_id": p.slide_id, "levels": entries}
    manifest_path.write_text(json.dumps(doc, indent=2) + "\n")
    return manifest_path


def read_level(p: PyramidImage, level: int) -> np.ndarray:
    if not 0 <= level < p.n_levels:
        raise LevelOutOfRange(f"level {level} not in [0, {p.n_levels})")
    return p.levels[level].raster


def working_level(p: PyramidImage, requested: int | None = None) -> int:
    """Level the pipeline processes: ``requested`` if given, else 2, else the coarsest."""
    if requested is not None:
        if not 0 <= requested < p.n_levels:
            raise LevelOutOfRange(f"level {requested} not in [0, {p.n_levels})")
        return requested
    return min(DEFAULT_WORKING_LEVEL, p.n_levels - 1)


def box_downsample(raster: np.ndarray, factor: int) -> np.ndarray:
    """Integer box filter; trailing rows/cols that do not fill a box are dropped."""
    if factor == 1:
        return raster.copy()
    h, w = raster.shape[:2]
    h2, w2 = h // factor, w // factor
    blocks = raster[: h2 * factor, : w2 * factor].astype(np.float64)
    blocks = blocks.reshape(h2, factor, w2, factor, -1).mean(axis=(1, 3))
    return np.clip(np.rint(blocks), 0, 255).astype(np.uint8)


def build_pyramid(slide_id: str, base: np.ndarray, downsamples=(1, 2, 4)) -> PyramidImage:
    """Derive a pyramid from a level-0 raster by integer box downsampling."""
    levels = []
    for i, ds in enumerate(downsamples):
        ds = int(ds)
        r = box_downsample(base, ds)
        levels.append(
            Level(
                index=i,
                width_px=r.shape[1],
                height_px=r.shape[0],
                downsample=float(ds),
                raster=r,
                file=f"{slide_id}_L{i}.png",
            )
        )
    return PyramidImage(slide_id=slide_id, levels=tuple(levels))
