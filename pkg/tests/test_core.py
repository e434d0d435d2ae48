import numpy as np
import pytest

from towervision.core import (
    CorruptRleError,
    InvalidPolygonError,
    ShapeMismatchError,
    mask_overlap,
    rasterize,
    rle_decode,
    rle_encode,
)

from helpers import random_polygon, rasterize_oracle, rect_mask


def test_rasterize_integer_square():
    square = [(0, 0), (4, 0), (4, 4), (0, 4)]
    mask = rasterize(square, 8, 8)
    expected = np.zeros((8, 8), dtype=bool)
    expected[0:4, 0:4] = True
    assert np.array_equal(mask, expected)
    assert mask.sum() == 16


def test_rasterize_rejects_degenerate_polygon():
    with pytest.raises(InvalidPolygonError):
        rasterize([(0, 0), (4, 4)], 8, 8)
    with pytest.raises(InvalidPolygonError):
        rasterize([(0, 0), (1, np.nan), (2, 2)], 8, 8)


def test_rasterize_concave_hexagon():
    hexagon = [(0, 0), (6, 0), (6, 2), (2, 2), (2, 6), (0, 6)]
    mask = rasterize(hexagon, 8, 8)
    assert mask.sum() == 20
    assert np.array_equal(mask, rasterize_oracle(hexagon, 8, 8))


def test_rasterize_clips_out_of_range_vertices():
    square = [(-3, -3), (5, -3), (5, 5), (-3, 5)]
    mask = rasterize(square, 8, 8)
    expected = np.zeros((8, 8), dtype=bool)
    expected[0:5, 0:5] = True
    assert np.array_equal(mask, expected)


def test_rasterize_matches_pointwise_oracle_on_random_polygons():
    rng = np.random.default_rng(11)
    for _ in range(40):
        width = int(rng.integers(1, 33))
        height = int(rng.integers(1, 33))
        poly = random_polygon(rng, width, height)
        assert np.array_equal(
            rasterize(poly, width, height), rasterize_oracle(poly, width, height)
        )


def test_rle_encode_examples():
    row = np.array([[0, 0, 1, 1, 1, 0]], dtype=bool)
    assert rle_encode(row) == [2, 3, 1]
    assert rle_encode(np.zeros((2, 2), dtype=bool)) == [4]
    assert rle_encode(np.array([[1, 1, 0, 1]], dtype=bool)) == [0, 2, 1, 1]


def test_rle_decode_examples():
    assert np.array_equal(
        rle_decode([2, 3, 1], 6, 1), np.array([[0, 0, 1, 1, 1, 0]], dtype=bool)
    )
    with pytest.raises(CorruptRleError):
        rle_decode([5], 2, 2)
    with pytest.raises(CorruptRleError):
        rle_decode([-1, 5], 2, 2)


def test_rle_round_trip_random_masks():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        width = int(rng.integers(1, 40))
        height = int(rng.integers(1, 40))
        mask = rng.random((height, width)) < rng.random()
        assert np.array_equal(rle_decode(rle_encode(mask), width, height), mask)


def test_mask_overlap_examples():
    a = rect_mask(8, 8, 1, 1, 3, 3)
    assert mask_overlap(a, a) == (9, 9)

    disjoint_a = rect_mask(16, 16, 0, 0, 5, 2)  # area 10
    disjoint_b = rect_mask(16, 16, 8, 8, 5, 4)  # area 20
    assert mask_overlap(disjoint_a, disjoint_b) == (0, 30)

    bar_a = rect_mask(8, 1, 0, 0, 4, 1)
    bar_b = rect_mask(8, 1, 2, 0, 4, 1)
    assert mask_overlap(bar_a, bar_b) == (2, 6)


def test_mask_overlap_properties():
    rng = np.random.default_rng(3)
    for _ in range(200):
        shape = (int(rng.integers(1, 24)), int(rng.integers(1, 24)))
        a = rng.random(shape) < 0.4
        b = rng.random(shape) < 0.4
        inter, union = mask_overlap(a, b)
        assert (inter, union) == mask_overlap(b, a)
        assert inter <= min(a.sum(), b.sum())
        assert union == int(a.sum()) + int(b.sum()) - inter


def test_mask_overlap_dimension_mismatch():
    with pytest.raises(ShapeMismatchError):
        mask_overlap(np.zeros((2, 2), dtype=bool), np.zeros((3, 2), dtype=bool))
