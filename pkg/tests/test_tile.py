import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histopipe.errors import DimMismatch, RectOutOfBounds
from histopipe.tile import (
    AugmentSpec,
    Patch,
    augment,
    coverage,
    extract_patches,
    hflip,
    read_manifest,
    rot90,
    shift,
    vflip,
    write_patches,
)


def brute_windows(mask, size, stride, min_cov):
    h, w = mask.shape
    hits = []
    y = 0
    while y + size <= h:
        x = 0
        while x + size <= w:
            c = sum(bool(mask[yy, xx]) for yy in range(y, y + size) for xx in range(x, x + size))
            if c / size**2 >= min_cov:
                hits.append((x, y, c / size**2))
            x += stride
        y += stride
    return hits


def test_coverage_examples():
    m = np.zeros((20, 20), bool)
    m[:, :5] = True
    assert coverage(np.ones((20, 20), bool), 3, 4, 10) == 1.0
    assert coverage(m, 10, 0, 10) == 0.0
    assert coverage(m, 0, 0, 10) == 0.5
    with pytest.raises(RectOutOfBounds):
        coverage(m, 15, 0, 10)


def test_extract_examples(rng):
    img = rng.integers(0, 256, size=(100, 100, 3), dtype=np.uint8)
    full = extract_patches(img, np.ones((100, 100), bool), 50, 50, 0.5)
    assert len(full) == 4 and all(p.coverage == 1.0 for p in full)
    assert [(p.x, p.y) for p in full] == [(0, 0), (50, 0), (0, 50), (50, 50)]
    np.testing.assert_array_equal(full[3].pixels, img[50:, 50:])
    assert extract_patches(img, np.zeros((100, 100), bool), 50, 50, 0.5) == []
    left = np.zeros((100, 100), bool)
    left[:, :50] = True
    got = extract_patches(img, left, 50, 50, 0.8)
    assert [(p.x, p.y) for p in got] == [(x, y) for x, y, _ in brute_windows(left, 50, 50, 0.8)]
    assert len(got) == 2


def test_extract_dim_mismatch(rng):
    with pytest.raises(DimMismatch):
        extract_patches(np.zeros((10, 10, 3), np.uint8), np.zeros((10, 11), bool), 5, 5, 0.5)


def test_extract_matches_brute_force_randomized():
    rng = np.random.default_rng(99)
    for _ in range(12):
        h, w = rng.integers(20, 48, size=2)
        mask = rng.random((h, w)) < rng.uniform(0.2, 0.9)
        img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        size = int(rng.integers(3, 12))
        stride = int(rng.integers(1, 12))
        cov = float(rng.choice([0.0, 0.25, 0.5, 0.8, 1.0, rng.uniform()]))
        got = extract_patches(img, mask, size, stride, cov)
        want = brute_windows(mask, size, stride, cov)
        assert [(p.x, p.y, p.coverage) for p in got] == want


def _patch(rng, n=8, slide="s"):
    return Patch(slide, 16, 32, n, rng.integers(0, 256, size=(n, n, 3), dtype=np.uint8), 1.0, "tumor")


def test_augment_disabled_is_identity(rng):
    p = _patch(rng)
    spec = AugmentSpec(False, False, False, 0, seed=3)
    for k in range(5):
        assert augment(p, spec, k).pixels.tobytes() == p.pixels.tobytes()


def test_transform_group_identities(rng):
    px = _patch(rng).pixels
    assert hflip(hflip(px)).tobytes() == px.tobytes()
    assert vflip(vflip(px)).tobytes() == px.tobytes()
    r = px
    for _ in range(4):
        r = rot90(r, 1)
    assert r.tobytes() == px.tobytes()
    assert shift(px, 0, 0).tobytes() == px.tobytes()


def test_shift_moves_content(rng):
    px = _patch(rng).pixels
    s = shift(px, 2, 1)
    np.testing.assert_array_equal(s[1:, 2:], px[:-1, :-2])
    # exposed border is a mirror of the edge
    np.testing.assert_array_equal(s[0, 2:], px[0, :-2])


def test_augment_deterministic_and_preserves_metadata(rng):
    p = _patch(rng)
    spec = AugmentSpec(True, True, True, 3, seed=11)
    a, b = augment(p, spec, 4), augment(p, spec, 4)
    assert a.pixels.tobytes() == b.pixels.tobytes()
    assert (a.slide_id, a.x, a.y, a.label, a.size_px) == (p.slide_id, p.x, p.y, p.label, p.size_px)
    outs = {augment(p, spec, k).pixels.tobytes() for k in range(20)}
    assert len(outs) > 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 1000))
def test_rotation_flip_preserve_pixel_multiset(seed, draw):
    rng = np.random.default_rng(seed)
    p = _patch(rng, n=6)
    out = augment(p, AugmentSpec(True, True, True, 0, seed=seed), draw)
    assert sorted(map(tuple, out.pixels.reshape(-1, 3))) == sorted(map(tuple, p.pixels.reshape(-1, 3)))


def test_write_patches_and_manifest(tmp_path, rng):
    ps = [_patch(rng, slide="a"), Patch("b", 0, 0, 8, _patch(rng).pixels, 0.9, "benign")]
    rows = write_patches(ps, tmp_path / "patches", tmp_path / "manifest.csv")
    assert (tmp_path / "patches" / "a_16_32.png").is_file()
    text = (tmp_path / "manifest.csv").read_text()
    assert text.splitlines()[0] == "path,slide_id,x,y,coverage,label"
    assert "\r" not in text
    back = read_manifest(tmp_path / "manifest.csv")
    assert [r["path"] for r in back] == [r["path"] for r in rows]
    assert back[1]["label"] == "benign" and back[1]["coverage"] == 0.9
