import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from bnplate import imaging as im
from bnplate.geometry import BBox
from oracles import otsu_exhaustive

gray_images = hnp.arrays(np.uint8, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=16))


def test_grayscale_examples():
    assert (im.to_grayscale(np.full((3, 4, 3), 255, np.uint8)) == 255).all()
    assert (im.to_grayscale(np.zeros((3, 4, 3), np.uint8)) == 0).all()
    # 0.299*100 + 0.587*150 + 0.114*200 = 140.75
    assert im.to_grayscale(np.array([[[100, 150, 200]]], np.uint8))[0, 0] == 141
    with pytest.raises(ValueError):
        im.to_grayscale(np.zeros((3, 4), np.uint8))


@pytest.mark.parametrize("pixels,expected", [
    ([128] * 9, 128),
    ([0, 0, 255, 255], 0),
    ([10, 10, 200, 200], 10),
])
def test_otsu_examples(pixels, expected):
    img = np.array(pixels, np.uint8).reshape(1, -1)
    assert im.otsu_threshold(img) == expected
    assert otsu_exhaustive(img) == expected


def test_otsu_rejects_empty():
    with pytest.raises(ValueError):
        im.otsu_threshold(np.zeros((0, 3), np.uint8))


@given(gray_images)
def test_otsu_matches_exhaustive(img):
    assert im.otsu_threshold(img) == otsu_exhaustive(img)


@given(gray_images, st.randoms(use_true_random=False))
def test_otsu_permutation_invariant(img, r):
    flat = img.ravel().tolist()
    r.shuffle(flat)
    assert im.otsu_threshold(np.array(flat, np.uint8).reshape(img.shape)) == im.otsu_threshold(img)


def test_binarize_examples():
    assert im.binarize(np.zeros((2, 2), np.uint8), 0).all()
    assert not im.binarize(np.full((2, 2), 255, np.uint8), 0).any()
    assert im.binarize(np.array([[10, 200]], np.uint8), 10).tolist() == [[1, 0]]
    assert im.binarize(np.array([[10, 200]], np.uint8), 10, im.LIGHT_FG).tolist() == [[0, 1]]


def test_crop_examples(rng):
    img = rng.integers(0, 256, (10, 10, 3)).astype(np.uint8)
    assert np.array_equal(im.crop(img, BBox(0, 0, 10, 10)), img)
    assert im.crop(img, BBox(2, 2, 5, 5)).shape == (3, 3, 3)
    assert im.crop(img, BBox(2.5, 2.2, 4.1, 4.9)).shape == (3, 3, 3)  # floor/ceil
    assert im.crop(img, BBox(2.5, 2.2, 3.9, 4.9)).shape == (3, 2, 3)
    assert im.crop(img, BBox(-5, -5, 3, 3)).shape == (3, 3, 3)
    with pytest.raises(ValueError):
        im.crop(img, BBox(20, 20, 30, 30))


def test_resize_examples(rng):
    img = rng.integers(0, 256, (7, 5)).astype(np.uint8)
    assert np.array_equal(im.resize(img, 5, 7), img)
    row = im.resize(np.array([[0, 255]], np.uint8), 4, 1)[0]
    assert row.shape == (4,) and (np.diff(row.astype(int)) >= 0).all()
    const = im.resize(np.full((2, 2), 77, np.uint8), 9, 5)
    assert const.shape == (5, 9) and (const == 77).all()
    assert im.resize(np.zeros((4, 4, 3), np.uint8), 3, 2).shape == (2, 3, 3)
    with pytest.raises(ValueError):
        im.resize(img, 0, 3)


def test_components_examples():
    assert im.connected_components(np.zeros((4, 4), np.uint8)) == []
    comps = im.connected_components(np.ones((3, 3), np.uint8))
    assert len(comps) == 1 and comps[0].pixel_count == 9
    diag = np.array([[1, 0], [0, 1]], np.uint8)
    assert len(im.connected_components(diag, 4)) == 2
    assert len(im.connected_components(diag, 8)) == 1
    with pytest.raises(ValueError):
        im.connected_components(diag, 6)


@given(hnp.arrays(np.uint8, (12, 12), elements=st.integers(0, 1)), st.sampled_from([4, 8]))
def test_components_partition(mask, conn):
    comps = im.connected_components(mask, conn)
    assert sum(c.pixel_count for c in comps) == mask.sum()
    keys = [(c.bbox.x_min, c.bbox.y_min) for c in comps]
    assert keys == sorted(keys)
    for c in comps:
        x, y = c.centroid
        assert c.bbox.x_min <= x <= c.bbox.x_max and c.bbox.y_min <= y <= c.bbox.y_max


def test_projections():
    mask = np.ones((3, 5), np.uint8)
    assert im.horizontal_projection(mask).tolist() == [5, 5, 5]
    assert im.vertical_projection(mask).tolist() == [3] * 5
    assert not im.horizontal_projection(np.zeros((3, 5))).any()


@given(hnp.arrays(np.uint8, (9, 7), elements=st.integers(0, 1)))
def test_projection_conservation(mask):
    assert im.horizontal_projection(mask).sum() == mask.sum() == im.vertical_projection(mask).sum()


def test_as_image_validation():
    with pytest.raises(ValueError):
        im.as_image(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        im.as_image(np.full((2, 2), 300))
    assert im.as_image(np.zeros((2, 2, 1))).shape == (2, 2)
