"""Tissue region-of-interest masks.

Grayscale conversion, Gaussian smoothing, a global Otsu threshold, 8-connected
component labeling with pixel-boundary contours, and an area filter. Rasters
are ``(H, W, 3) uint8`` arrays, gray images ``(H, W) uint8`` and masks
``(H, W) bool`` (True == tissue).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import ndimage

from .errors import DegenerateHistogram, EmptyImage

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Component:
    label: int
    area_px: int
    bbox: tuple[int, int, int, int]  # x, y, w, h
    contour: list[tuple[int, int]] = field(repr=False)
    contour_area: float = 0.0


@dataclass(frozen=True)
class SegmentParams:
    sigma: float = 2.0
    min_area_px: int | None = None  # None -> 0.5% of the image's pixel count
    tissue_is_dark: bool = True
    min_area_frac: float = 0.005

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    def resolve_min_area(self, n_pixels: int) -> int:
        if self.min_area_px is not None:
            return int(self.min_area_px)
        return int(math.ceil(self.min_area_frac * n_pixels))


def to_grayscale(raster: np.ndarray) -> np.ndarray:
    raster = np.asarray(raster)
    if raster.size == 0:
        raise EmptyImage("raster has no pixels")
    g = raster[..., :3].astype(np.float64) @ LUMA
    return np.clip(np.rint(g), 0, 255).astype(np.uint8)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def _convolve_axis(a: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = len(k) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    # "symmetric" repeats the edge sample: (d c b a | a b c d | d c b a)
    p = np.pad(a, pad, mode="symmetric")
    out = np.zeros_like(a, dtype=np.float64)
    n = a.shape[axis]
    for i, w in enumerate(k):
        out += w * np.take(p, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur(g: np.ndarray, sigma: float) -> np.ndarray:
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.array(g, copy=True)
    k = gaussian_kernel(sigma)
    out = _convolve_axis(np.asarray(g, dtype=np.float64), k, 0)
    out = _convolve_axis(out, k, 1)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def otsu_threshold(g: np.ndarray) -> int:
    """Threshold t maximizing between-class variance of {g < t} vs {g >= t}.

    Scores are compared exactly (rational arithmetic) so ties resolve to the
    smallest t deterministically.
    """
    hist = np.bincount(np.asarray(g, dtype=np.uint8).ravel(), minlength=256)
    if np.count_nonzero(hist) < 2:
        raise DegenerateHistogram("image has a single distinct gray value")
    counts = [int(c) for c in hist]
    total_n = sum(counts)
    total_s = sum(v * c for v, c in enumerate(counts))
    best_t, best = 0, Fraction(-1)
    n0 = s0 = 0
    for t in range(256):
        # class 0 holds values < t
        if t > 0:
            n0 += counts[t - 1]
            s0 += (t - 1) * counts[t - 1]
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            score = Fraction(0)
        else:
            s1 = total_s - s0
            score = Fraction((s0 * n1 - s1 * n0) ** 2, n0 * n1)
        if score > best:
            best, best_t = score, t
    return best_t


def binarize(g: np.ndarray, t: int, tissue_is_dark: bool = True) -> np.ndarray:
    g = np.asarray(g)
    return g < t if tissue_is_dark else g >= t


_STRUCT8 = np.ones((3, 3), dtype=bool)


def trace_boundary(region: np.ndarray) -> list[tuple[int, int]]:
    """Outer boundary of an 8-connected region as a closed polygon of pixel corners.

    Vertices are ``(x, y)`` corner coordinates relative to ``region``. The walk
    keeps the region on its right and prefers left turns, so pixels touching
    only diagonally stay inside one outline. First vertex == last vertex.
    """
    region = np.asarray(region, dtype=bool)
    h, w = region.shape

    def inside(px, py):
        return 0 <= px < w and 0 <= py < h and bool(region[py, px])

    ys, xs = np.nonzero(region)
    if len(ys) == 0:
        return []
    sy = int(ys.min())
    sx = int(xs[ys == sy].min())
    start = (sx, sy)
    # top edge of the first pixel in raster order is always boundary
    v, d = (sx + 1, sy), (1, 0)
    pts = [start, v]
    while v != start:
        dx, dy = d
        rx, ry = -dy, dx  # right turn in y-down coordinates
        cx2, cy2 = 2 * v[0] + dx, 2 * v[1] + dy
        if inside((cx2 - rx - 1) // 2, (cy2 - ry - 1) // 2):
            d = (dy, -dx)
        elif not inside((cx2 + rx - 1) // 2, (cy2 + ry - 1) // 2):
            d = (rx, ry)
        v = (v[0] + d[0], v[1] + d[1])
        pts.append(v)
    return pts


def shoelace_area(poly) -> float:
    if len(poly) < 4:
        return 0.0
    a = 0
    for (x0, y0), (x1, y1) in zip(poly[:-1], poly[1:]):
        a += x0 * y1 - x1 * y0
    return abs(a) / 2.0


def connected_components(m: np.ndarray) -> list[Component]:
    m = np.asarray(m, dtype=bool)
    labels, n = ndimage.label(m, structure=_STRUCT8)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    comps = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = sl
        sub = labels[sl] == k
        poly = [(x + xs.start, y + ys.start) for x, y in trace_boundary(sub)]
        comps.append(
            Component(
                label=k,
                area_px=int(areas[k]),
                bbox=(xs.start, ys.start, xs.stop - xs.start, ys.stop - ys.start),
                contour=poly,
                contour_area=shoelace_area(poly),
            )
        )
    return comps


def filter_components(cs: list[Component], min_area_px: int) -> list[Component]:
    if min_area_px < 0:
        raise ValueError("min_area_px must be >= 0")
    return [c for c in cs if c.area_px >= min_area_px]


def components_mask(shape, binary: np.ndarray, kept: list[Component]) -> np.ndarray:
    """Union of the kept components of ``binary`` (labels recomputed)."""
    labels, _ = ndimage.label(binary, structure=_STRUCT8)
    keep = np.zeros(labels.max() + 1, dtype=bool)
    keep[[c.label for c in kept]] = True
    keep[0] = False
    out = keep[labels]
    assert out.shape == tuple(shape)
    return out


def build_mask(raster: np.ndarray, params: SegmentParams | None = None):
    """Return ``(mask, components)`` for a slide raster.

    Raises DegenerateHistogram when the smoothed image holds one gray value
    (e.g. blank glass); callers treat that as "no tissue".
    """
    params = params or SegmentParams()
    g = gaussian_blur(to_grayscale(raster), params.sigma)
    t = otsu_threshold(g)
    binary = binarize(g, t, params.tissue_is_dark)
    comps = filter_components(
        connected_components(binary), params.resolve_min_area(binary.size)
    )
    return components_mask(binary.shape, binary, comps), comps


def write_components_csv(path, comps: list[Component]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "area_px", "bbox_x", "bbox_y", "bbox_w", "bbox_h", "contour_area"])
        for c in comps:
            w.writerow([c.label, c.area_px, *c.bbox, f"{c.contour_area:.1f}"])
