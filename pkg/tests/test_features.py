import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drsolver.core import DetectedShape, Primitive, RasterImage, Scene, ShapeKind, SizeLabel, StructuralError
from drsolver.features import (
    NOISE,
    FeatureConfig,
    acquire_knowledge,
    build_rotation_set,
    dbscan,
    estimate_rotation,
    extract_scaling,
    knowledge_to_text,
    rung_labels,
)
from drsolver.raster import rasterize, rotate_image, similarity
from oracles import partition, reference_dbscan

# Best NCC over 360 rotations between two unrelated two-shape scenes, frozen
# from one run of the rotation search as a regression bound.
UNRELATED_BEST_SCORE = 0.46399117704578335

S, L = SizeLabel.SMALL, SizeLabel.LARGE


def box(side):
    return DetectedShape(ShapeKind.SQUARE, True, (0, 0, side, side), 1.0)


def test_rotation_set_element_zero_is_reference(rot_problem):
    ref = rot_problem.panels[0]
    orbit = build_rotation_set(ref)
    assert len(orbit) == 360
    assert orbit[0] == ref
    assert orbit[37] == rotate_image(ref, 37)


def test_rotation_set_element_ninety_matches_rotated_panel(rot_problem):
    orbit = build_rotation_set(rot_problem.panels[0])
    assert similarity(orbit[90], rot_problem.panels[1]) >= 0.80


def test_half_turn_twice_is_identity(rot_problem):
    r = rot_problem.panels[0]
    assert similarity(rotate_image(rotate_image(r, 180), 180), r) >= 0.99


def test_estimate_rotation_self():
    img = rasterize(Scene((64, 64), (Primitive(ShapeKind.TRIANGLE, (0.4, 0.4), 0.2, 0.0, True),)))
    res = estimate_rotation(img, img)
    assert res.best_theta == 0.0 and res.best_score == 1.0 and res.above_threshold


def test_rotation_example_question_angles(rot_problem):
    ref = rot_problem.panels[0]
    assert [estimate_rotation(ref, rot_problem.panels[k]).best_theta for k in range(3)] == [0.0, 90.0, 180.0]


def test_unrelated_scene_stays_below_threshold():
    s1 = Scene(
        (64, 64),
        (
            Primitive(ShapeKind.TRIANGLE, (0.3, 0.3), 0.2, 10.0, True),
            Primitive(ShapeKind.CIRCLE, (0.72, 0.7), 0.1, 0.0, True),
        ),
    )
    s2 = Scene(
        (64, 64),
        (
            Primitive(ShapeKind.STAR, (0.6, 0.35), 0.22, 0.0, False),
            Primitive(ShapeKind.SQUARE, (0.3, 0.75), 0.1, 0.0, True),
        ),
    )
    res = estimate_rotation(rasterize(s1), rasterize(s2))
    assert not res.above_threshold
    assert res.best_score == pytest.approx(UNRELATED_BEST_SCORE, abs=1e-9)


def test_estimate_rotation_size_mismatch():
    with pytest.raises(StructuralError):
        estimate_rotation(RasterImage.blank(64, 64), RasterImage.blank(32, 32))


def test_rotation_ties_pick_smallest_angle():
    # A centered filled square matches itself at 0, 90, 180 and 270.
    img = rasterize(Scene((64, 64), (Primitive(ShapeKind.SQUARE, (0.5, 0.5), 0.3, 0.0, True),)))
    assert estimate_rotation(img, img).best_theta == 0.0


def test_dbscan_examples():
    labels = dbscan([1.0, 1.1, 1.2, 9.0, 9.1], eps=0.5, min_pts=2)
    assert labels.tolist() == [0, 0, 0, 1, 1]
    assert dbscan([3.0], eps=1.0, min_pts=1).tolist() == [0]
    assert dbscan([0.0, 5.0, 10.0], eps=1.0, min_pts=2).tolist() == [NOISE] * 3
    assert dbscan([], eps=1.0, min_pts=1).tolist() == []


def test_dbscan_rejects_bad_parameters():
    with pytest.raises(ValueError):
        dbscan([1.0], eps=0.0, min_pts=1)
    with pytest.raises(ValueError):
        dbscan([1.0], eps=1.0, min_pts=0)


def test_dbscan_border_point_joins_first_cluster():
    # 2.0 is a border point between the cores around 0..1 and 3..4.
    pts = [0.0, 0.5, 1.0, 2.0, 3.0, 3.5, 4.0]
    labels = dbscan(pts, eps=1.0, min_pts=3)
    assert labels[3] == labels[0]
    assert labels.tolist() == reference_dbscan(pts, 1.0, 3).tolist()


points_1d = st.lists(st.floats(0, 100, allow_nan=False), min_size=0, max_size=20)


@settings(max_examples=200, deadline=None)
@given(points_1d, st.floats(0.5, 20), st.integers(1, 4))
def test_dbscan_matches_reference(pts, eps, min_pts):
    assert dbscan(pts, eps, min_pts).tolist() == reference_dbscan(pts, eps, min_pts).tolist()


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=20),
    st.floats(0.3, 3),
    st.integers(1, 3),
)
def test_dbscan_matches_reference_2d(pts, eps, min_pts):
    assert dbscan(pts, eps, min_pts).tolist() == reference_dbscan(pts, eps, min_pts).tolist()


@settings(max_examples=100, deadline=None)
@given(points_1d, st.floats(0.5, 20), st.randoms(use_true_random=False))
def test_dbscan_permutation_invariant(pts, eps, rnd):
    # With min_pts=1 every point is core, so the partition is fully determined.
    order = list(range(len(pts)))
    rnd.shuffle(order)
    base = dbscan(pts, eps, 1)
    shuffled = dbscan([pts[i] for i in order], eps, 1)
    back = np.empty_like(shuffled)
    back[order] = shuffled
    assert partition(back) == partition(base)


@settings(max_examples=100, deadline=None)
@given(points_1d, st.floats(0.5, 20), st.integers(2, 4), st.randoms(use_true_random=False))
def test_dbscan_core_and_noise_permutation_invariant(pts, eps, min_pts, rnd):
    # Border points may legitimately change cluster with visiting order;
    # core memberships and the noise set may not.
    x = np.asarray(pts, dtype=float)
    core = np.array([np.sum(np.abs(x - v) <= eps) >= min_pts for v in x], dtype=bool)
    order = list(range(len(pts)))
    rnd.shuffle(order)
    base = dbscan(pts, eps, min_pts)
    shuffled = dbscan([pts[i] for i in order], eps, min_pts)
    back = np.empty_like(shuffled)
    back[order] = shuffled
    assert set(np.flatnonzero(back == NOISE)) == set(np.flatnonzero(base == NOISE))
    if core.any():
        assert partition(back[core]) == partition(base[core])


def test_rung_labels():
    assert rung_labels(1) == (SizeLabel.NORMAL,)
    assert rung_labels(4) == (SizeLabel.TINY, SizeLabel.SMALL, SizeLabel.LARGE, SizeLabel.VERY_LARGE)
    assert rung_labels(2) == (SizeLabel.TINY, SizeLabel.VERY_LARGE)
    assert rung_labels(0) == ()


def test_scaling_ladder_gives_four_groups(scale_problem):
    kb = acquire_knowledge(scale_problem)
    assert [rf.sigma for rf in kb.per_panel[:3]] == [(SizeLabel.VERY_LARGE,), (SizeLabel.LARGE,), (SizeLabel.SMALL,)]
    assert kb.sigma_informative


def test_scaling_equal_areas_are_all_normal():
    res = extract_scaling([[box(10)] for _ in range(7)])
    assert all(s == (SizeLabel.NORMAL,) for s in res.sigma)
    assert len(res.clusters) == 1


def test_scaling_empty_panels_are_nil():
    res = extract_scaling([[box(10)], [], [box(30)], [], [], [], []])
    assert res.sigma[1] == (SizeLabel.NIL,)
    assert res.sigma[0] == (SizeLabel.TINY,) and res.sigma[2] == (SizeLabel.VERY_LARGE,)
    assert not extract_scaling([[] for _ in range(7)]).informative


def test_scaling_all_noise_is_non_informative():
    res = extract_scaling([[box(10)], [box(20)], [box(30)], [], [], [], []], eps=1.0, min_pts=2)
    assert not res.informative
    assert res.sigma[0] == (SizeLabel.NORMAL,)


def test_scaling_clusters_ascend_by_area():
    res = extract_scaling([[box(30), box(5)], [box(12)], [box(20)], [], [], [], []], eps=5.0)
    means = [c.mean_area for c in res.clusters]
    assert means == sorted(means)
    assert [c.label for c in res.clusters] == sorted(c.label for c in res.clusters)


def test_scaling_noise_takes_nearest_cluster():
    res = extract_scaling([[box(10), box(10)], [box(11)], [box(30), box(30)], [box(25)], [], [], []], eps=30.0, min_pts=2)
    assert res.sigma[1] == res.sigma[0][:1]
    assert res.sigma[3] == res.sigma[2][:1]


def test_knowledge_rotation_example(rot_problem):
    kb = acquire_knowledge(rot_problem)
    assert [rf.rho for rf in kb.per_panel] == [0.0, 90.0, 180.0, 180.0, 90.0, 0.0, 270.0]
    assert all(rf.chi[ShapeKind.TRIANGLE] == 2 for rf in kb.per_panel)
    assert all(rf.sigma == (SizeLabel.NORMAL, SizeLabel.NORMAL) for rf in kb.per_panel)


def test_knowledge_counting_example(count_problem):
    kb = acquire_knowledge(count_problem)
    assert [rf.chi[ShapeKind.CIRCLE] for rf in kb.per_panel] == [2, 4, 6, 6, 8, 4, 10]
    assert not kb.rho_available


def test_knowledge_scaling_example(scale_problem):
    kb = acquire_knowledge(scale_problem)
    V, T, N = SizeLabel.VERY_LARGE, SizeLabel.TINY, SizeLabel.NIL
    assert [rf.sigma[0] for rf in kb.per_panel] == [V, L, S, N, T, V, S]


def test_knowledge_other_example(other_problem):
    kb = acquire_knowledge(other_problem)
    assert all(rf.chi[ShapeKind.STAR] == 4 for rf in kb.per_panel)
    assert all(set(rf.sigma) == {SizeLabel.NORMAL} for rf in kb.per_panel)


def test_rho_is_all_or_nothing(count_problem, rot_problem):
    for p in (count_problem, rot_problem):
        rho = [rf.rho for rf in acquire_knowledge(p).per_panel]
        assert all(r is None for r in rho) or (rho[0] == 0.0 and None not in rho)


def test_knowledge_is_pure(scale_problem):
    cfg = FeatureConfig()
    assert acquire_knowledge(scale_problem, cfg) == acquire_knowledge(scale_problem, cfg)


def test_knowledge_rejects_wrong_panel_count():
    with pytest.raises(StructuralError):
        acquire_knowledge([RasterImage.blank(32, 32)] * 6)


def test_knowledge_text_record(rot_problem, scale_problem):
    assert knowledge_to_text(acquire_knowledge(rot_problem)) == (
        "shapes: {filled triangle, triangle}\n"
        "rho: {0deg, 90deg, 180deg, 180deg, 90deg, 0deg, 270deg}\n"
        "chi: {<2>, <2>, <2>, <2>, <2>, <2>, <2>}\n"
        "sigma: {<Normal,Normal>, <Normal,Normal>, <Normal,Normal>, <Normal,Normal>, "
        "<Normal,Normal>, <Normal,Normal>, <Normal,Normal>}\n"
    )
    text = knowledge_to_text(acquire_knowledge(scale_problem))
    assert "rho: {NA}" in text
    assert "sigma: {<VeryLarge>, <Large>, <Small>, <Nil>, <Tiny>, <VeryLarge>, <Small>}" in text
