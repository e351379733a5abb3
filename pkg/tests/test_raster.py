import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drsolver.core import Primitive, RasterImage, RasterizationError, Scene, ShapeKind, StructuralError
from drsolver.raster import (
    decode_pgm,
    encode_pgm,
    primitive_vertices,
    rasterize,
    rotate_image,
    rotate_many,
    similarity,
    similarity_to_stack,
)
from oracles import flood_components

# Frozen once from the reference implementation: filled circle (size 0.25,
# 64x64) against the same circle shifted right by one pixel.
CIRCLE_SHIFT_SIMILARITY = 0.9508469186322099


def scene(*prims, size=(64, 64)):
    return Scene(size, tuple(prims))


def circle(x, y, r, filled=True):
    return Primitive(ShapeKind.CIRCLE, (x, y), r, 0.0, filled)


def asymmetric_scene(rot=0.0):
    return scene(
        Primitive(ShapeKind.TRIANGLE, (0.35, 0.4), 0.2, rot, True),
        Primitive(ShapeKind.SQUARE, (0.72, 0.68), 0.1, rot, True),
    )


def test_single_circle_is_one_component():
    img = rasterize(scene(circle(0.5, 0.5, 0.4)))
    assert flood_components(img.ink_mask()) == 1


def test_two_circles_are_two_components():
    img = rasterize(scene(circle(0.25, 0.5, 0.15), circle(0.75, 0.5, 0.15)))
    assert flood_components(img.ink_mask()) == 2


def test_empty_scene_is_blank():
    img = rasterize(scene())
    assert (img.pixels == 255).all()


def test_rasterize_is_deterministic():
    s = asymmetric_scene(17.0)
    assert rasterize(s).to_bytes() == rasterize(s).to_bytes()


def test_out_of_bounds_primitive_fails():
    with pytest.raises(RasterizationError):
        rasterize(scene(circle(0.05, 0.5, 0.2)))


def test_overlapping_primitives_fail():
    with pytest.raises(RasterizationError):
        rasterize(scene(circle(0.4, 0.5, 0.15), circle(0.6, 0.5, 0.15)))


def test_circle_radius_within_one_pixel():
    img = rasterize(scene(circle(0.5, 0.5, 0.3)))
    ys, xs = np.nonzero(img.ink_mask())
    r_measured = np.hypot(xs + 0.5 - 32, ys + 0.5 - 32).max()
    assert abs(r_measured - 0.3 * 64) <= 1.0


def test_polygon_vertices_round_half_away_from_zero():
    p = Primitive(ShapeKind.SQUARE, (0.5, 0.5), 0.25, 0.0, True)
    v = primitive_vertices(p, 64, 64)
    # 45 degree corners at 16 * cos(45) = 11.31 px from the center.
    assert sorted(set(v[:, 0].tolist())) == [21.0, 43.0]


def test_rotate_zero_is_identity():
    img = rasterize(asymmetric_scene())
    assert rotate_image(img, 0.0) == img


def test_rotate_90_then_270_restores():
    img = rasterize(asymmetric_scene())
    assert similarity(rotate_image(rotate_image(img, 90), 270), img) >= 0.99


def test_vector_and_raster_rotation_agree():
    ref = rotate_image(rasterize(asymmetric_scene(0.0)), 90)
    assert similarity(rasterize(rotate_scene_90()), ref) >= 0.97


def rotate_scene_90():
    from drsolver.raster import rotate_scene

    return rotate_scene(asymmetric_scene(0.0), 90.0)


def test_rotate_many_rows_match_single_rotations():
    img = rasterize(asymmetric_scene())
    angles = [0, 1, 37, 90, 180, 225, 359]
    stack = rotate_many(img.pixels, angles)
    for a, row in zip(angles, stack):
        assert np.array_equal(row, rotate_image(img, a).pixels)


def test_general_path_agrees_with_exact_quarter_turn():
    # 90 + tiny epsilon goes through bilinear resampling.
    img = rasterize(asymmetric_scene())
    assert similarity(rotate_image(img, 90.0000001), rotate_image(img, 90)) >= 0.99


@pytest.mark.parametrize("angle", [90, 180, 270])
def test_quarter_turns_preserve_ink(angle):
    img = rasterize(asymmetric_scene(11.0))
    before = img.ink_mask().sum()
    after = rotate_image(img, angle).ink_mask().sum()
    assert abs(after - before) <= 0.1 * before


def test_similarity_self_is_one():
    img = rasterize(asymmetric_scene())
    assert similarity(img, img) == 1.0


def test_similarity_translated_circle_matches_frozen_value():
    a = rasterize(scene(circle(0.5, 0.5, 0.25)))
    b = rasterize(scene(circle(0.5 + 1 / 64, 0.5, 0.25)))
    s = similarity(a, b)
    assert s > 0.8
    assert s == pytest.approx(CIRCLE_SHIFT_SIMILARITY, abs=1e-12)


def test_similarity_blank_cases():
    blank = RasterImage.blank(64, 64)
    square = rasterize(scene(Primitive(ShapeKind.SQUARE, (0.5, 0.5), 0.3, 0.0, True)))
    assert similarity(blank, square) == 0.0
    assert similarity(blank, blank) == 1.0


def test_similarity_dimension_mismatch():
    with pytest.raises(StructuralError):
        similarity(RasterImage.blank(32, 32), RasterImage.blank(64, 64))


@settings(max_examples=40, deadline=None)
@given(st.binary(min_size=256, max_size=256), st.binary(min_size=256, max_size=256))
def test_similarity_is_symmetric_and_bounded(a, b):
    x = RasterImage.from_bytes(16, 16, a)
    y = RasterImage.from_bytes(16, 16, b)
    s = similarity(x, y)
    assert abs(s - similarity(y, x)) <= 1e-12
    assert -1.0 <= s <= 1.0


@settings(max_examples=20, deadline=None)
@given(st.lists(st.binary(min_size=144, max_size=144), min_size=1, max_size=5), st.binary(min_size=144, max_size=144))
def test_stack_similarity_matches_pairwise(stack, query):
    imgs = [RasterImage.from_bytes(12, 12, d) for d in stack]
    q = RasterImage.from_bytes(12, 12, query)
    masks = np.stack([i.ink_mask() for i in imgs])
    got = similarity_to_stack(masks, q)
    assert got.tolist() == [similarity(i, q) for i in imgs]


def test_similarity_peaks_at_true_rotation():
    theta = 53
    base = rasterize(asymmetric_scene())
    target = rotate_image(base, theta)
    stack = rotate_many(base.pixels, range(360)) < 128
    best = int(np.argmax(similarity_to_stack(stack, target)))
    assert min(abs(best - theta), 360 - abs(best - theta)) <= 2


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.data())
def test_pgm_round_trip(w, h, data):
    raw = data.draw(st.binary(min_size=w * h, max_size=w * h))
    img = RasterImage.from_bytes(w, h, raw)
    assert decode_pgm(encode_pgm(img)) == img


def test_pgm_header_comments_and_errors():
    img = decode_pgm(b"P5\n# a comment\n2 1\n255\n\x00\xff")
    assert img.pixels.tolist() == [[0, 255]]
    with pytest.raises(StructuralError):
        decode_pgm(b"P2\n2 1\n255\n\x00\xff")
    with pytest.raises(StructuralError):
        decode_pgm(b"P5\n2 1\n65535\n\x00\xff")
    with pytest.raises(StructuralError):
        decode_pgm(b"P5\n2 2\n255\n\x00\xff")
