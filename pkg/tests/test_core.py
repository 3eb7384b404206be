import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from suppress.core import Annotation, BBox, Detection, Image, crop, iou, resize_bilinear
from suppress.errors import FormatError, InvalidBox, NoOverlap, ScoreOutOfRange


# -----------------------------------------
#   Value types
# -----------------------------------------

def test_image_owns_a_read_only_copy():
    arr = np.zeros((2, 3, 3), dtype=np.uint8)
    img = Image(arr)
    arr[0, 0] = 255

    assert (img.width, img.height) == (3, 2)
    assert img.pixels[0, 0, 0] == 0
    with pytest.raises(ValueError):
        img.pixels[0, 0, 0] = 1


@pytest.mark.parametrize("shape", [(0, 3, 3), (3, 3), (3, 3, 4)])
def test_image_rejects_bad_shapes(shape):
    with pytest.raises(FormatError):
        Image(np.zeros(shape, dtype=np.uint8))


@pytest.mark.parametrize("box", [(0, 0, 0, 5), (0, 0, 5, -1), (math.nan, 0, 1, 1), (0, math.inf, 1, 1)])
def test_bbox_rejects_degenerate_boxes(box):
    with pytest.raises(InvalidBox):
        BBox(*box)


@pytest.mark.parametrize("score", [-0.01, 1.01])
def test_detection_score_must_be_a_probability(score):
    with pytest.raises(ScoreOutOfRange):
        Detection("a", BBox(0, 0, 1, 1), score)


def test_tag_value_reads_key_value_tags():
    ann = Annotation("a", BBox(0, 0, 1, 1), {"variety=gala", "occluded"})
    assert ann.tag_value("variety") == "gala"
    assert ann.tag_value("lighting") is None


# -----------------------------------------
#   IoU
# -----------------------------------------

def test_iou_identical_boxes():
    assert iou(BBox(10, 10, 20, 20), BBox(10, 10, 20, 20)) == 1.0


def _random_box(rng):
    return BBox(*rng.uniform(0, 100, 2), *rng.uniform(0.01, 60, 2))


def test_iou_random_boxes_self_and_symmetry():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        a, b = _random_box(rng), _random_box(rng)
        assert iou(a, a) == 1.0
        assert iou(BBox(a.x, a.y, a.w, a.h), a) == 1.0
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0


def test_iou_disjoint_boxes():
    assert iou(BBox(0, 0, 10, 10), BBox(100, 100, 10, 10)) == 0.0


def test_iou_touching_edges_is_zero():
    assert iou(BBox(0, 0, 10, 10), BBox(10, 0, 10, 10)) == 0.0


def test_iou_half_shifted_boxes():
    a, b = BBox(0, 0, 10, 10), BBox(5, 0, 10, 10)
    assert iou(a, b) == pytest.approx(50 / 150)
    assert iou(a, b) == iou(b, a)


# -----------------------------------------
#   Crop
# -----------------------------------------

def _ramp(w, h):
    arr = np.arange(w * h * 3, dtype=np.uint8).reshape(h, w, 3)
    return Image(arr)


def test_crop_full_image_is_identity():
    img = _ramp(4, 4)
    assert_array_equal(crop(img, BBox(0, 0, 4, 4)).pixels, img.pixels)


def test_crop_top_left_corner():
    img = _ramp(4, 4)
    out = crop(img, BBox(0, 0, 2, 2))
    assert (out.width, out.height) == (2, 2)
    assert_array_equal(out.pixels, img.pixels[:2, :2])


def test_crop_clamps_past_the_right_edge():
    img = _ramp(6, 4)
    out = crop(img, BBox(3, 1, 8, 2))
    assert (out.width, out.height) == (3, 2)
    assert_array_equal(out.pixels, img.pixels[1:3, 3:6])


def test_crop_fractional_edges_widen_to_whole_pixels():
    img = _ramp(6, 6)
    out = crop(img, BBox(1.5, 1.2, 2.0, 2.0))
    assert_array_equal(out.pixels, img.pixels[1:4, 1:4])


def test_crop_outside_the_image():
    with pytest.raises(NoOverlap):
        crop(_ramp(4, 4), BBox(10, 10, 3, 3))


def test_crop_of_crop_with_the_full_sub_box_is_unchanged():
    rng = np.random.default_rng(31)
    img = Image(rng.integers(0, 256, size=(40, 50, 3), dtype=np.uint8))
    for _ in range(200):
        x, y = rng.uniform(-10, 55), rng.uniform(-10, 45)
        w, h = rng.uniform(0.5, 30, 2)
        try:
            once = crop(img, BBox(x, y, w, h))
        except NoOverlap:
            continue
        twice = crop(once, BBox(0, 0, once.width, once.height))
        assert_array_equal(twice.pixels, once.pixels)


# -----------------------------------------
#   Bilinear resize
# -----------------------------------------

def test_resize_same_size_is_identity():
    img = _ramp(5, 3)
    assert_array_equal(resize_bilinear(img, 5, 3).pixels, img.pixels)


@pytest.mark.parametrize("size", [(1, 1), (7, 3), (36, 36)])
def test_resize_constant_image_stays_constant(size):
    img = Image.filled(2, 2, (12, 200, 77))
    out = resize_bilinear(img, *size)
    assert (out.width, out.height) == size
    assert (out.pixels == np.array([12, 200, 77], dtype=np.uint8)).all()


def test_resize_black_white_row_to_four():
    img = Image(np.array([[[0, 0, 0], [255, 255, 255]]], dtype=np.uint8))
    out = resize_bilinear(img, 4, 1)
    # corner-aligned samples at x = 0, 1/3, 2/3, 1
    expected = [0, round(255 / 3), round(2 * 255 / 3), 255]
    assert_array_equal(out.pixels[0, :, 0], expected)
    assert_array_equal(out.pixels[0, :, 0], out.pixels[0, :, 2])


def test_resize_keeps_corner_pixels():
    img = _ramp(9, 7)
    out = resize_bilinear(img, 36, 36)
    assert_array_equal(out.pixels[0, 0], img.pixels[0, 0])
    assert_array_equal(out.pixels[-1, -1], img.pixels[-1, -1])


def test_resize_rejects_empty_target():
    with pytest.raises(FormatError):
        resize_bilinear(_ramp(2, 2), 0, 3)
