import numpy as np
import pytest

from bnplate.geometry import BBox, iou
from bnplate.grammar import LOWER, UPPER, random_record
from bnplate.segmenter import SegmentConfig, normalize_glyph, segment_plate, split_rows
from bnplate.synth import render_plate


def match_rate(segs, truth):
    hit = 0
    for row in (UPPER, LOWER):
        t = [b for _, b, r in truth if r == row]
        s = [g.source_box for g in segs if g.row == row]
        hit += sum(1 for a, b in zip(t, s) if iou(a, b) >= 0.7)
    return hit / len(truth)


def test_blank_plate():
    assert segment_plate(np.full((40, 80), 200, np.uint8)) == []


def test_rendered_plates(atlas):
    for s in range(40):
        record = random_record(np.random.default_rng(s))
        img, truth = render_plate(record, atlas, seed=s)
        segs = segment_plate(img)
        assert len(segs) == len(truth)
        assert match_rate(segs, truth) == 1.0
        for row in (UPPER, LOWER):
            orders = [g.order for g in segs if g.row == row]
            xs = [g.source_box.x_min for g in segs if g.row == row]
            assert orders == list(range(len(orders))) and xs == sorted(xs)
        assert all(g.patch.shape == (64, 64, 3) for g in segs)


def test_flip_and_shift(atlas):
    img, truth = render_plate(random_record(np.random.default_rng(3)), atlas, seed=3)
    segs = segment_plate(img)
    flipped = segment_plate(img[:, ::-1])
    assert len(flipped) == len(segs)
    w = img.shape[1]
    for row in (UPPER, LOWER):
        a = [g.source_box for g in segs if g.row == row]
        b = [g.source_box for g in flipped if g.row == row]
        mirrored = [BBox(w - x.x_max, x.y_min, w - x.x_min, x.y_max) for x in reversed(a)]
        assert all(iou(p, q) > 0.9 for p, q in zip(mirrored, b))
    shifted = np.full_like(img, 225)
    shifted[2:, 2:] = img[:-2, :-2]
    assert len(segment_plate(shifted)) == len(segs)


def test_inverted_plate(atlas):
    img, truth = render_plate(random_record(np.random.default_rng(5)), atlas, seed=5)
    assert len(segment_plate(255 - img)) == len(truth)


def test_deterministic(atlas):
    img, _ = render_plate(random_record(np.random.default_rng(6)), atlas, seed=6)
    a, b = segment_plate(img), segment_plate(img)
    assert [g.source_box for g in a] == [g.source_box for g in b]
    assert all(np.array_equal(x.patch, y.patch) for x, y in zip(a, b))


def test_rgb_plate(atlas):
    img, truth = render_plate(random_record(np.random.default_rng(8)), atlas, seed=8)
    assert len(segment_plate(np.repeat(img[:, :, None], 3, axis=2))) == len(truth)


def test_split_rows_examples():
    mask = np.zeros((40, 30), np.uint8)
    mask[2:15] = 1
    mask[25:38] = 1
    (a0, a1), (b0, b1) = split_rows(mask)
    assert a0 == 0 and b1 == 40 and 15 <= a1 == b0 <= 25
    assert split_rows(np.zeros((10, 10), np.uint8)) == [(0, 10)]
    bar = np.zeros((20, 10), np.uint8)
    bar[5:15] = 1
    assert split_rows(bar) == [(0, 20)]


def test_normalize_glyph_examples(rng):
    patch = rng.integers(0, 256, (64, 64, 3)).astype(np.uint8)
    assert np.array_equal(normalize_glyph(patch), patch)
    const = normalize_glyph(np.full((10, 7), 90, np.uint8))
    assert const.shape == (64, 64, 3) and (const == 90).all()
    tall = np.full((32, 8), 0, np.uint8)
    out = normalize_glyph(tall, background=255)[:, :, 0]
    cols = np.nonzero((out < 128).any(axis=0))[0]
    # 8 of 32 columns -> 16 of 64, centered
    assert cols.min() == 24 and cols.max() == 39
    with pytest.raises(ValueError):
        normalize_glyph(np.zeros((0, 3), np.uint8))


def test_config_thresholds_are_used(atlas):
    img, truth = render_plate(random_record(np.random.default_rng(2)), atlas, seed=2)
    strict = SegmentConfig(min_area_frac=0.5)
    assert len(segment_plate(img, strict)) < len(truth)
