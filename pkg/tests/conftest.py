"""Shared fixtures: hand-built problems mirroring the four worked examples."""

import numpy as np
import pytest

from drsolver.core import Category, Primitive, ProblemSpace, Scene, ShapeKind
from drsolver.raster import rasterize, rotate_scene

PANEL = (64, 64)


def build_problem(scenes, answer_index, category=None, pid="x"):
    return ProblemSpace(
        panels=tuple(rasterize(s) for s in scenes),
        answer_index=answer_index,
        scenes=tuple(scenes),
        true_category=category,
        problem_id=pid,
    )


def half_filled_triangles() -> Scene:
    """One filled and one outlined triangle, asymmetric under rotation."""
    return Scene(
        PANEL,
        (
            Primitive(ShapeKind.TRIANGLE, (0.32, 0.34), 0.17, 0.0, True),
            Primitive(ShapeKind.TRIANGLE, (0.68, 0.66), 0.17, 0.0, False),
        ),
    )


def rotation_example() -> ProblemSpace:
    # Question {0, 90, 180}; options {180, 90, 0, 270}; answer D.
    base = half_filled_triangles()
    angles = [0, 90, 180, 180, 90, 0, 270]
    return build_problem([rotate_scene(base, a) for a in angles], 7, Category.RT, "rot")


def circles(n: int) -> Scene:
    cells = [(c, r) for r in range(3) for c in range(4)]
    prims = [
        Primitive(ShapeKind.CIRCLE, ((c + 0.5) / 4, (r + 0.5) / 3), 0.07, 0.0, True)
        for c, r in cells[:n]
    ]
    return Scene(PANEL, tuple(prims))


def counting_example() -> ProblemSpace:
    # Question {2, 4, 6}; options {6, 8, 4, 10}; answer B.
    return build_problem([circles(n) for n in (2, 4, 6, 6, 8, 4, 10)], 5, Category.CT, "count")


LADDER = {"VeryLarge": 0.4, "Large": 0.3, "Small": 0.2, "Tiny": 0.12}


def triangle_of(label) -> Scene:
    if label is None:
        return Scene(PANEL, ())
    return Scene(PANEL, (Primitive(ShapeKind.TRIANGLE, (0.5, 0.5), LADDER[label], 0.0, True),))


def scaling_example() -> ProblemSpace:
    # Question {VeryLarge, Large, Small}; options {Nil, Tiny, VeryLarge, Small}; answer B.
    labels = ["VeryLarge", "Large", "Small", None, "Tiny", "VeryLarge", "Small"]
    return build_problem([triangle_of(l) for l in labels], 5, Category.SS, "scale")


def four_stars(shift: float) -> Scene:
    spots = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
    return Scene(
        PANEL,
        tuple(
            Primitive(ShapeKind.STAR, (x, min(max(y + shift, 0.2), 0.8)), 0.15, 0.0, True)
            for x, y in spots
        ),
    )


def other_example() -> ProblemSpace:
    shifts = [0.0, -0.03, 0.03, 0.0, -0.03, 0.03, -0.02]
    return build_problem([four_stars(s) for s in shifts], 4, Category.OT, "other")


@pytest.fixture(scope="session")
def rot_problem():
    return rotation_example()


@pytest.fixture(scope="session")
def count_problem():
    return counting_example()


@pytest.fixture(scope="session")
def scale_problem():
    return scaling_example()


@pytest.fixture(scope="session")
def other_problem():
    return other_example()


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def small_corpus():
    from drsolver.core import CATEGORIES
    from drsolver.generator import GeneratorSpec, generate_corpus

    spec = GeneratorSpec(seed=8, counts={c: 20 for c in CATEGORIES})
    return generate_corpus(spec)


@pytest.fixture(scope="session")
def small_models(small_corpus):
    from drsolver.reasoner import SolverConfig, train_models

    return train_models(small_corpus, SolverConfig(), seed=0)


# Acceptance tests append "PASS/FAIL criterion N: ..." lines here; they are
# echoed in the terminal summary so they survive output capture.
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
