from collections import Counter

import pytest

from drsolver.core import CATEGORIES, Category, GenerationError
from drsolver.generator import (
    GeneratorSpec,
    _generate_ct,
    generate_corpus,
    generate_problem,
    ground_truth_counts,
    ground_truth_rotations,
    problem_rng,
    proportional_counts,
    satisfying_options,
)
from drsolver.raster import similarity


def corpus_bytes(problems):
    return b"".join(
        p.problem_id.encode() + bytes([p.answer_index]) + b"".join(x.to_bytes() for x in p.panels)
        for p in problems
    )


@pytest.fixture(scope="module")
def mixed():
    spec = GeneratorSpec(seed=11, counts={c: 15 for c in CATEGORIES})
    return spec, generate_corpus(spec)


def test_counts_per_category(mixed):
    spec, problems = mixed
    assert len(problems) == 60
    hist = Counter(p.true_category for p in problems)
    assert all(hist[c] == 15 for c in CATEGORIES)
    assert all(4 <= p.answer_index <= 7 for p in problems)


def test_same_seed_is_byte_identical(mixed):
    spec, problems = mixed
    again = generate_corpus(GeneratorSpec(seed=11, counts={c: 15 for c in CATEGORIES}))
    assert corpus_bytes(again) == corpus_bytes(problems)


def test_ordinal_ranges_can_be_generated_independently(mixed):
    spec, problems = mixed
    parts = generate_corpus(spec, 0, 23) + generate_corpus(spec, 23)
    assert corpus_bytes(parts) == corpus_bytes(problems)


def test_different_seed_differs(mixed):
    _, problems = mixed
    other = generate_corpus(GeneratorSpec(seed=12, counts={c: 15 for c in CATEGORIES}))
    assert corpus_bytes(other) != corpus_bytes(problems)


def test_exactly_one_option_satisfies_rule(mixed):
    spec, problems = mixed
    for p in problems:
        assert satisfying_options(p, spec) == [p.answer_index], p.problem_id


def test_distractors_are_discriminable(mixed):
    _, problems = mixed
    for p in problems:
        ans = p.panels[p.answer_index - 1]
        for k in range(3, 7):
            if k != p.answer_index - 1:
                assert similarity(p.panels[k], ans) <= 0.98


def test_rt_ninety_degree_progression():
    spec = GeneratorSpec(seed=5, counts={Category.RT: 1}, rotation_steps=(90.0,))
    p = generate_problem(spec, Category.RT, problem_rng(5, 0))
    rot = ground_truth_rotations(p)
    assert [round(r) for r in rot[:3]] == [0, 90, 180]
    assert round(rot[p.answer_index - 1]) == 270
    others = [round(rot[k]) for k in range(3, 7) if k != p.answer_index - 1]
    assert 270 not in others


def test_ct_two_step_two_progression():
    spec = GeneratorSpec(seed=5, counts={Category.CT: 1})
    p = _generate_ct(spec, problem_rng(5, 0), "ct", a=2, d=2)
    counts = ground_truth_counts(p)
    assert counts[:3] == [2, 4, 6]
    assert counts[p.answer_index - 1] == 8
    assert sorted(counts[k] for k in range(3, 7)).count(8) == 1


def test_ct_infeasible_progression_raises():
    spec = GeneratorSpec(seed=5, counts={Category.CT: 1})
    with pytest.raises(GenerationError):
        _generate_ct(spec, problem_rng(5, 0), "ct", a=6, d=3)


def test_ct_packing_infeasible_raises():
    spec = GeneratorSpec(seed=0, counts={Category.CT: 1}, panel_size=32, count_max=30)
    with pytest.raises(GenerationError):
        generate_problem(spec, Category.CT, problem_rng(0, 0))


def test_ss_answer_is_fourth_rung():
    spec = GeneratorSpec(seed=9, counts={Category.SS: 1})
    p = generate_problem(spec, Category.SS, problem_rng(9, 3))
    sizes = [s.primitives[0].size if s.primitives else None for s in p.scenes]
    assert sizes[:3] == list(spec.scale_ladder[:3])
    assert sizes[p.answer_index - 1] == spec.scale_ladder[3]


def test_invalid_specs_raise():
    with pytest.raises(GenerationError):
        GeneratorSpec(counts={Category.RT: -1})
    with pytest.raises(GenerationError):
        GeneratorSpec(scale_ladder=(0.1, 0.2, 0.3, 0.4))
    with pytest.raises(GenerationError):
        GeneratorSpec(rotation_steps=(360.0,))
    with pytest.raises(GenerationError):
        GeneratorSpec(count_max=3)


def test_answer_positions_cover_all_options(mixed):
    _, problems = mixed
    assert {p.answer_index for p in problems} == {4, 5, 6, 7}


def test_proportional_counts_largest_remainder():
    weights = {Category.RT: 0.3, Category.CT: 0.25, Category.SS: 0.2, Category.OT: 0.25}
    counts = proportional_counts(619, weights)
    assert sum(counts.values()) == 619
    for c, w in weights.items():
        assert abs(counts[c] - 619 * w) < 1


@pytest.mark.slow
def test_619_problem_histogram_matches_request():
    weights = {Category.RT: 0.3, Category.CT: 0.25, Category.SS: 0.2, Category.OT: 0.25}
    counts = proportional_counts(619, weights)
    problems = generate_corpus(GeneratorSpec(seed=3, counts=counts))
    hist = Counter(p.true_category for p in problems)
    assert {c: hist[c] for c in CATEGORIES} == counts
