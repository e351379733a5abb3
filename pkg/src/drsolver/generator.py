"""Synthetic 4x1 problem generator with exact ground truth.

Every problem is generated from its own RNG stream keyed by
``(spec.seed, ordinal)``, so a corpus can be produced in any order or in
parallel chunks and still come out byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .core import (
    CATEGORIES,
    Category,
    GenerationError,
    Primitive,
    ProblemSpace,
    RasterizationError,
    Scene,
    ShapeKind,
)
from .raster import check_scene, rasterize, rotate_many, rotate_scene, similarity

ALL_KINDS = tuple(ShapeKind)
COUNT_KINDS = (ShapeKind.CIRCLE, ShapeKind.SQUARE, ShapeKind.HEXAGON, ShapeKind.DIAMOND, ShapeKind.TRIANGLE)
OT_FAMILIES = ("translation", "alternation")
TRANSLATION_SLOTS = (0.2, 0.4, 0.6, 0.8)
NEAR_DUPLICATE = 0.98
RT_ASYMMETRY_MAX = 0.85
GAP_PX = 3.0
MAX_ATTEMPTS = 200


@dataclass(frozen=True)
class GeneratorSpec:
    seed: int = 0
    counts: Mapping[Category, int] = field(
        default_factory=lambda: {c: 0 for c in CATEGORIES}
    )
    panel_size: int = 64
    rotation_steps: tuple[float, ...] = (45.0, 90.0, 135.0)
    count_max: int = 12
    count_steps: tuple[int, ...] = (1, 2, 3)
    scale_ladder: tuple[float, float, float, float] = (0.4, 0.3, 0.2, 0.12)

    def __post_init__(self):
        counts = {c: int(self.counts.get(c, 0)) for c in CATEGORIES}
        if any(v < 0 for v in counts.values()):
            raise GenerationError("negative category count")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "rotation_steps", tuple(float(s) for s in self.rotation_steps))
        if len(self.scale_ladder) != 4 or any(
            a <= b for a, b in zip(self.scale_ladder, self.scale_ladder[1:])
        ):
            raise GenerationError("scale_ladder must be 4 strictly descending fractions")
        if any(s % 360.0 == 0 for s in self.rotation_steps):
            raise GenerationError("rotation step must be non-zero modulo 360")
        if not self.progressions():
            raise GenerationError("no count progression satisfies a + 3d <= count_max")

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def progressions(self) -> list[tuple[int, int]]:
        return [
            (a, d)
            for d in self.count_steps
            if d >= 1
            for a in range(1, self.count_max + 1)
            if a + 3 * d <= self.count_max
        ]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "counts": {c.value: n for c, n in self.counts.items()},
            "panel_size": self.panel_size,
            "rotation_steps": list(self.rotation_steps),
            "count_max": self.count_max,
            "count_steps": list(self.count_steps),
            "scale_ladder": list(self.scale_ladder),
        }


def proportional_counts(total: int, weights: Mapping[Category, float]) -> dict[Category, int]:
    """Largest-remainder apportionment of ``total`` problems over categories."""
    wsum = float(sum(weights.values()))
    raw = {c: total * weights.get(c, 0.0) / wsum for c in CATEGORIES}
    out = {c: int(math.floor(v)) for c, v in raw.items()}
    rest = total - sum(out.values())
    order = sorted(CATEGORIES, key=lambda c: (-(raw[c] - out[c]), CATEGORIES.index(c)))
    for c in order[:rest]:
        out[c] += 1
    return out


def problem_rng(seed: int, ordinal: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(ordinal)])


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _scene(spec: GeneratorSpec, prims) -> Scene:
    return Scene((spec.panel_size, spec.panel_size), tuple(prims))


def _assemble(spec, category, rng, question, answer, distractors, problem_id, attempt_check=True):
    """Place the answer uniformly among the options and rasterize."""
    answer_pos = int(rng.integers(4))
    options = list(distractors)
    options.insert(answer_pos, answer)
    scenes = list(question) + options
    panels = [rasterize(s) for s in scenes]
    if attempt_check:
        ans_img = panels[3 + answer_pos]
        for k in range(3, 7):
            if k != 3 + answer_pos and similarity(panels[k], ans_img) > NEAR_DUPLICATE:
                return None
    return ProblemSpace(
        panels=tuple(panels),
        answer_index=4 + answer_pos,
        scenes=tuple(scenes),
        true_category=category,
        problem_id=problem_id,
    )


# --- rotation ---------------------------------------------------------------


def _random_rt_base(spec: GeneratorSpec, rng) -> Scene:
    n = spec.panel_size
    margin = (GAP_PX + 1.0) / n
    for _ in range(MAX_ATTEMPTS):
        sizes = [float(rng.uniform(0.20, 0.26))] + [
            float(rng.uniform(0.09, 0.12)) for _ in range(int(rng.integers(1, 3)))
        ]
        prims = []
        for i, size in enumerate(sizes):
            r_max = 0.5 - size - margin
            rad = r_max * math.sqrt(float(rng.uniform(0.0, 1.0)))
            ang = float(rng.uniform(0.0, 2 * math.pi))
            prims.append(
                Primitive(
                    kind=_pick(rng, ALL_KINDS),
                    center=(0.5 + rad * math.cos(ang), 0.5 + rad * math.sin(ang)),
                    size=size,
                    rotation_deg=float(rng.uniform(0.0, 360.0)),
                    filled=True,  # thin outlines resample poorly off-axis
                )
            )
        scene = _scene(spec, prims)
        if not _well_separated(scene):
            continue
        if _rotationally_asymmetric(scene):
            return scene
    raise GenerationError("could not build a rotationally asymmetric base scene")


def _well_separated(scene: Scene) -> bool:
    try:
        check_scene(scene)
    except RasterizationError:
        return False
    w, h = scene.panel_size
    m = min(w, h)
    ps = scene.primitives
    for i in range(len(ps)):
        for j in range(i + 1, len(ps)):
            dx = (ps[i].center[0] - ps[j].center[0]) * w
            dy = (ps[i].center[1] - ps[j].center[1]) * h
            if math.hypot(dx, dy) - (ps[i].size + ps[j].size) * m < GAP_PX:
                return False
    return True


def _rotationally_asymmetric(scene: Scene) -> bool:
    base = rasterize(scene)
    # A 4-degree grid is fine enough to catch near-symmetries of these shapes.
    angles = [a for a in range(8, 353, 4)]
    stack = rotate_many(base.pixels, angles) < 128
    q = base.ink_mask().ravel()
    flat = stack.reshape(len(angles), -1)
    n = q.size
    sa = flat.sum(axis=1).astype(np.float64)
    sq = float(q.sum())
    sab = flat[:, q].sum(axis=1).astype(np.float64)
    ncc = (n * sab - sa * sq) / np.sqrt((n * sa - sa * sa) * (n * sq - sq * sq))
    return float(ncc.max()) < RT_ASYMMETRY_MAX


def _generate_rt(spec, rng, problem_id):
    base = _random_rt_base(spec, rng)
    delta = float(_pick(rng, spec.rotation_steps))
    question = [rotate_scene(base, (k * delta) % 360.0) for k in range(3)]
    answer_angle = (3 * delta) % 360.0
    pool = [a for a in np.arange(0.0, 360.0, 45.0) if not math.isclose(a, answer_angle)]
    for _ in range(MAX_ATTEMPTS):
        picks = rng.choice(len(pool), size=3, replace=False)
        distractors = [rotate_scene(base, float(pool[i])) for i in picks]
        p = _assemble(spec, Category.RT, rng, question, rotate_scene(base, answer_angle), distractors, problem_id)
        if p is not None:
            return p
    raise GenerationError("rotation distractors are indistinguishable from the answer")


# --- counting ---------------------------------------------------------------


def _count_layout(spec: GeneratorSpec):
    n = spec.panel_size
    cols = int(math.ceil(math.sqrt(spec.count_max)))
    rows = int(math.ceil(spec.count_max / cols))
    cw, ch = n / cols, n / rows
    r_px = 0.36 * min(cw, ch)
    if r_px < 3.0 or min(cw, ch) - 2 * r_px < GAP_PX:
        raise GenerationError(
            f"{spec.count_max} shapes cannot be packed without overlap in a {n}x{n} panel"
        )
    return cols, rows, cw, ch, r_px


def _count_scene(spec, rng, kind, count, layout) -> Scene:
    cols, rows, cw, ch, r_px = layout
    n = spec.panel_size
    jx = max(0.0, cw / 2 - r_px - GAP_PX / 2)
    jy = max(0.0, ch / 2 - r_px - GAP_PX / 2)
    cells = sorted(rng.choice(cols * rows, size=count, replace=False).tolist())
    prims = []
    for cell in cells:
        cx = (cell % cols + 0.5) * cw + float(rng.uniform(-jx, jx))
        cy = (cell // cols + 0.5) * ch + float(rng.uniform(-jy, jy))
        prims.append(Primitive(kind=kind, center=(cx / n, cy / n), size=r_px / n, filled=True))
    return _scene(spec, prims)


def _generate_ct(spec, rng, problem_id, a=None, d=None):
    layout = _count_layout(spec)
    if a is None or d is None:
        a, d = _pick(rng, spec.progressions())
    if a < 1 or d < 1 or a + 3 * d > spec.count_max:
        raise GenerationError(f"count progression a={a}, d={d} exceeds count_max={spec.count_max}")
    kind = _pick(rng, COUNT_KINDS)
    answer = a + 3 * d
    pool = sorted(
        {a, a + d, a + 2 * d, a + 4 * d}
        | {answer + k for k in (-3, -2, -1, 1, 2)}
        - {answer}
    )
    pool = [c for c in pool if 1 <= c <= spec.count_max]
    for _ in range(MAX_ATTEMPTS):
        counts = rng.choice(pool, size=3, replace=False)
        question = [_count_scene(spec, rng, kind, a + k * d, layout) for k in range(3)]
        distractors = [_count_scene(spec, rng, kind, int(c), layout) for c in counts]
        p = _assemble(spec, Category.CT, rng, question, _count_scene(spec, rng, kind, answer, layout), distractors, problem_id)
        if p is not None:
            return p
    raise GenerationError("could not build counting distractors")


# --- scaling ----------------------------------------------------------------


def _generate_ss(spec, rng, problem_id):
    kind = _pick(rng, ALL_KINDS)
    ladder = spec.scale_ladder

    def rung(size: Optional[float]) -> Scene:
        if size is None:
            return _scene(spec, [])
        return _scene(spec, [Primitive(kind=kind, center=(0.5, 0.5), size=size, filled=True)])

    question = [rung(s) for s in ladder[:3]]
    pool = [ladder[0], ladder[1], ladder[2], None]
    for _ in range(MAX_ATTEMPTS):
        picks = rng.choice(len(pool), size=3, replace=False)
        p = _assemble(spec, Category.SS, rng, question, rung(ladder[3]), [rung(pool[i]) for i in picks], problem_id)
        if p is not None:
            return p
    raise GenerationError("could not build scaling distractors")


# --- other type -------------------------------------------------------------


def _generate_translation(spec, rng, problem_id):
    kind = _pick(rng, ALL_KINDS)
    filled = bool(rng.integers(2))
    size = 0.14
    horizontal = bool(rng.integers(2))
    slots = list(TRANSLATION_SLOTS) if rng.integers(2) else list(reversed(TRANSLATION_SLOTS))
    crosses = [0.3, 0.5, 0.7]
    cross = _pick(rng, crosses)

    def at(slot, c=cross) -> Scene:
        center = (slot, c) if horizontal else (c, slot)
        return _scene(spec, [Primitive(kind=kind, center=center, size=size, filled=filled)])

    question = [at(s) for s in slots[:3]]
    other_cross = _pick(rng, [c for c in crosses if c != cross])
    pool = [at(slots[0]), at(slots[1]), at(slots[2]), at(slots[3], other_cross)]
    for _ in range(MAX_ATTEMPTS):
        picks = rng.choice(len(pool), size=3, replace=False)
        p = _assemble(spec, Category.OT, rng, question, at(slots[3]), [pool[i] for i in picks], problem_id)
        if p is not None:
            return p
    raise GenerationError("could not build translation distractors")


def _generate_alternation(spec, rng, problem_id):
    kinds = list(rng.permutation(len(ALL_KINDS))[:3])
    k1, k2, k3 = (ALL_KINDS[i] for i in kinds)
    size = float(rng.uniform(0.2, 0.3))
    lim = 0.5 - size - 0.05
    center = (0.5 + float(rng.uniform(-lim, lim)), 0.5 + float(rng.uniform(-lim, lim)))
    first = bool(rng.integers(2))

    def shape(kind, filled) -> Scene:
        return _scene(spec, [Primitive(kind=kind, center=center, size=size, filled=filled)])

    question = [shape(k1, first), shape(k1, not first), shape(k1, first)]
    answer = shape(k1, not first)
    pool = [shape(k1, first), shape(k2, not first), shape(k2, first), shape(k3, not first)]
    for _ in range(MAX_ATTEMPTS):
        picks = rng.choice(len(pool), size=3, replace=False)
        p = _assemble(spec, Category.OT, rng, question, answer, [pool[i] for i in picks], problem_id)
        if p is not None:
            return p
    raise GenerationError("could not build alternation distractors")


def _generate_ot(spec, rng, problem_id):
    if _pick(rng, OT_FAMILIES) == "translation":
        return _generate_translation(spec, rng, problem_id)
    return _generate_alternation(spec, rng, problem_id)


_GENERATORS = {
    Category.RT: _generate_rt,
    Category.CT: _generate_ct,
    Category.SS: _generate_ss,
    Category.OT: _generate_ot,
}


def generate_problem(spec: GeneratorSpec, category: Category, rng: np.random.Generator, problem_id: str = "") -> ProblemSpace:
    return _GENERATORS[Category(category)](spec, rng, problem_id)


def corpus_plan(spec: GeneratorSpec) -> list[tuple[int, Category]]:
    """(ordinal, category) for every problem, categories in RT, CT, SS, OT order."""
    plan = []
    for cat in CATEGORIES:
        plan.extend([cat] * spec.counts[cat])
    return list(enumerate(plan))


def generate_corpus(spec: GeneratorSpec, start: int = 0, stop: Optional[int] = None) -> list[ProblemSpace]:
    """Generate problems with ordinals in [start, stop) (default: the whole corpus)."""
    plan = corpus_plan(spec)[start:stop]
    return [
        generate_problem(spec, cat, problem_rng(spec.seed, k), problem_id=f"p{k:05d}")
        for k, cat in plan
    ]


# --- ground-truth checks ------------------------------------------------------


def _same_primitive(p: Primitive, q: Primitive, tol: float = 1e-6) -> bool:
    drot = abs((p.rotation_deg - q.rotation_deg + 180.0) % 360.0 - 180.0)
    return (
        p.kind is q.kind
        and p.filled == q.filled
        and abs(p.size - q.size) <= tol
        and abs(p.center[0] - q.center[0]) <= tol
        and abs(p.center[1] - q.center[1]) <= tol
        and drot <= tol
    )


def _same_scene(a: Scene, b: Scene) -> bool:
    return len(a.primitives) == len(b.primitives) and all(
        _same_primitive(p, q) for p, q in zip(a.primitives, b.primitives)
    )


def scene_rotation(base: Scene, scene: Scene) -> Optional[float]:
    """Rotation (degrees) that maps ``base`` onto ``scene``, if one does."""
    if not base.primitives or len(base.primitives) != len(scene.primitives):
        return None
    angle = round((scene.primitives[0].rotation_deg - base.primitives[0].rotation_deg) % 360.0, 9) % 360.0
    return angle if _same_scene(rotate_scene(base, angle), scene) else None


def satisfying_options(p: ProblemSpace, spec: GeneratorSpec) -> list[int]:
    """Option indices (4..7) that continue the question under the generating rule.

    The rule is re-derived from the stored scenes, independent of how the
    generator chose the answer.
    """
    if p.scenes is None or p.true_category is None:
        raise GenerationError("problem carries no scene ground truth")
    q, opts = p.scenes[:3], p.scenes[3:]
    cat = p.true_category
    hits = []
    if cat is Category.RT:
        angles = [scene_rotation(q[0], s) for s in q]
        if None in angles:
            return []
        delta = (angles[1] - angles[0]) % 360.0
        if not math.isclose((angles[2] - angles[1]) % 360.0, delta, abs_tol=1e-6):
            return []
        target = (angles[2] + delta) % 360.0
        for k, s in enumerate(opts):
            a = scene_rotation(q[0], s)
            if a is not None and min(abs(a - target), 360 - abs(a - target)) < 1e-6:
                hits.append(4 + k)
    elif cat is Category.CT:
        c = [len(s.primitives) for s in q]
        if c[1] - c[0] != c[2] - c[1]:
            return []
        target = c[2] + (c[2] - c[1])
        hits = [4 + k for k, s in enumerate(opts) if len(s.primitives) == target]
    elif cat is Category.SS:
        ladder = list(spec.scale_ladder)
        sizes = [s.primitives[0].size if s.primitives else None for s in q]
        if sizes != ladder[:3]:
            return []
        hits = [
            4 + k
            for k, s in enumerate(opts)
            if s.primitives and math.isclose(s.primitives[0].size, ladder[3])
        ]
    else:
        p0 = [s.primitives[0] for s in q]
        if p0[0].center != p0[1].center:
            step = tuple(b - a for a, b in zip(p0[1].center, p0[2].center))
            want = Primitive(
                kind=p0[2].kind,
                center=(p0[2].center[0] + step[0], p0[2].center[1] + step[1]),
                size=p0[2].size,
                rotation_deg=p0[2].rotation_deg,
                filled=p0[2].filled,
            )
        else:
            want = p0[1]
        hits = [
            4 + k
            for k, s in enumerate(opts)
            if len(s.primitives) == 1 and _same_primitive(s.primitives[0], want)
        ]
    return hits


def ground_truth_rotations(p: ProblemSpace) -> list[Optional[float]]:
    """Per-panel rotation relative to panel 1 for RT problems (from scenes)."""
    if p.scenes is None:
        raise GenerationError("problem carries no scene ground truth")
    return [scene_rotation(p.scenes[0], s) for s in p.scenes]


def ground_truth_counts(p: ProblemSpace) -> list[int]:
    if p.scenes is None:
        raise GenerationError("problem carries no scene ground truth")
    return [len(s.primitives) for s in p.scenes]
