"""Relational features: rotation, counts and relative size for each panel.

Rotation is found by rotating panel 1 through all 360 whole degrees and
keeping the best-matching angle for every other panel. Sizes are grouped by
DBSCAN over bounding-box areas pooled across the seven panels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    BINARY_THRESHOLD,
    N_PANELS,
    DetectedShape,
    KnowledgeBase,
    ProblemSpace,
    RasterImage,
    RelationalFeatures,
    SizeLabel,
    StructuralError,
)
from .perception import count_by_kind, detect_shapes
from .raster import rotate_many, similarity_to_stack

NOISE = -1
FOUR_RUNG_LABELS = (SizeLabel.TINY, SizeLabel.SMALL, SizeLabel.LARGE, SizeLabel.VERY_LARGE)


@dataclass(frozen=True)
class FeatureConfig:
    rotation_threshold: float = 0.80
    eps_fraction: float = 0.15  # of the pooled bbox-area range
    eps_floor_fraction: float = 0.25  # of the median bbox area
    min_pts: int = 1

    def to_dict(self) -> dict:
        return {
            "rotation_threshold": self.rotation_threshold,
            "eps_fraction": self.eps_fraction,
            "eps_floor_fraction": self.eps_floor_fraction,
            "min_pts": self.min_pts,
        }


@dataclass(frozen=True)
class RotationSearchResult:
    best_theta: float
    best_score: float
    above_threshold: bool


@dataclass(frozen=True)
class SizeCluster:
    members: tuple[int, ...]
    mean_area: float
    label: SizeLabel


@dataclass(frozen=True)
class ScalingResult:
    sigma: tuple[tuple[SizeLabel, ...], ...]
    informative: bool
    clusters: tuple[SizeCluster, ...] = field(default=())


# --- rotation ---------------------------------------------------------------


def build_rotation_set(reference: RasterImage) -> list[RasterImage]:
    """Element j is ``rotate_image(reference, j)`` for j = 0..359."""
    return [RasterImage(a) for a in rotate_many(reference.pixels, range(360))]


class RotationOrbit:
    """Binarized rotation set of a reference panel, reused across queries."""

    def __init__(self, reference: RasterImage):
        self.reference = reference
        self.masks = rotate_many(reference.pixels, range(360)) < BINARY_THRESHOLD

    def scores(self, query: RasterImage) -> np.ndarray:
        if query.shape != self.reference.shape:
            raise StructuralError("query and reference panels differ in size")
        return similarity_to_stack(self.masks, query)

    def search(self, query: RasterImage, threshold: float) -> RotationSearchResult:
        s = self.scores(query)
        best = int(np.argmax(s))  # first maximum, i.e. smallest angle on ties
        return RotationSearchResult(
            best_theta=float(best),
            best_score=float(s[best]),
            above_threshold=bool(s[best] >= threshold),
        )


def estimate_rotation(reference: RasterImage, query: RasterImage, threshold: float = 0.80) -> RotationSearchResult:
    return RotationOrbit(reference).search(query, threshold)


# --- DBSCAN -----------------------------------------------------------------


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """Cluster labels (0..k-1, NOISE for noise) for 1-D or n-D points.

    Neighbourhoods are closed balls (distance <= eps) that include the point
    itself. Points are visited in index order, so cluster ids follow the
    lowest-index core point of each cluster, and a border point reachable
    from several clusters joins the one discovered first.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    x = np.asarray(points, dtype=np.float64)
    if x.size == 0:
        return np.empty(0, dtype=np.int64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    dist = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2))
    neighbours = [np.flatnonzero(dist[i] <= eps) for i in range(n)]
    core = np.array([len(nb) >= min_pts for nb in neighbours])

    unset = -2
    labels = np.full(n, unset, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != unset:
            continue
        if not core[i]:
            labels[i] = NOISE
            continue
        labels[i] = cluster
        queue = [i]
        head = 0
        while head < len(queue):
            p = queue[head]
            head += 1
            for q in neighbours[p]:
                if labels[q] == unset or labels[q] == NOISE:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return labels


# --- scaling ----------------------------------------------------------------


def rung_labels(n_clusters: int) -> tuple[SizeLabel, ...]:
    """Size labels for clusters sorted by ascending mean area."""
    if n_clusters <= 0:
        return ()
    if n_clusters == 1:
        return (SizeLabel.NORMAL,)
    if n_clusters == 4:
        return FOUR_RUNG_LABELS
    lo, hi = int(SizeLabel.TINY), int(SizeLabel.VERY_LARGE)
    return tuple(
        SizeLabel(int(round(lo + i * (hi - lo) / (n_clusters - 1)))) for i in range(n_clusters)
    )


def default_eps(areas: np.ndarray, cfg: FeatureConfig) -> float:
    spread = float(areas.max() - areas.min())
    floor = cfg.eps_floor_fraction * float(np.median(areas))
    return max(cfg.eps_fraction * spread, floor, 1.0)


def extract_scaling(
    shapes_per_panel: Sequence[Sequence[DetectedShape]],
    eps: Optional[float] = None,
    min_pts: int = 1,
    cfg: FeatureConfig = FeatureConfig(),
) -> ScalingResult:
    """Per-panel size labels from DBSCAN over pooled bbox areas."""
    owners = [(k, j) for k, shapes in enumerate(shapes_per_panel) for j in range(len(shapes))]
    if not owners:
        return ScalingResult(tuple((SizeLabel.NIL,) for _ in shapes_per_panel), informative=False)
    areas = np.array([shapes_per_panel[k][j].area for k, j in owners], dtype=np.float64)
    if eps is None:
        eps = default_eps(areas, cfg)
    labels = dbscan(areas, eps, min_pts)

    ids = sorted(set(labels.tolist()) - {NOISE})
    if not ids:
        sigma = [
            tuple(SizeLabel.NORMAL for _ in shapes) if shapes else (SizeLabel.NIL,)
            for shapes in shapes_per_panel
        ]
        return ScalingResult(tuple(sigma), informative=False)

    means = {c: float(areas[labels == c].mean()) for c in ids}
    ordered = sorted(ids, key=lambda c: (means[c], c))
    names = rung_labels(len(ordered))
    label_of = {c: names[i] for i, c in enumerate(ordered)}
    clusters = tuple(
        SizeCluster(tuple(np.flatnonzero(labels == c).tolist()), means[c], label_of[c]) for c in ordered
    )
    for i in np.flatnonzero(labels == NOISE):
        labels[i] = min(ordered, key=lambda c: (abs(areas[i] - means[c]), means[c]))

    sigma: list[list[SizeLabel]] = [[] for _ in shapes_per_panel]
    for (k, _), c in zip(owners, labels):
        sigma[k].append(label_of[int(c)])
    return ScalingResult(
        tuple(tuple(s) if s else (SizeLabel.NIL,) for s in sigma),
        informative=True,
        clusters=clusters,
    )


# --- knowledge acquisition ----------------------------------------------------


def _panels_of(p) -> tuple[RasterImage, ...]:
    panels = p.panels if isinstance(p, ProblemSpace) else tuple(p)
    if len(panels) != N_PANELS:
        raise StructuralError(f"problem needs {N_PANELS} panels, got {len(panels)}")
    return panels


def extract_rotations(panels: Sequence[RasterImage], threshold: float) -> list[Optional[float]]:
    """Rotation of every panel relative to panel 1, or all None when any match fails."""
    ref = panels[0]
    if ref.is_blank():
        return [None] * len(panels)
    orbit = RotationOrbit(ref)
    rho: list[Optional[float]] = [0.0]
    for img in panels[1:]:
        res = orbit.search(img, threshold)
        if not res.above_threshold:
            return [None] * len(panels)
        rho.append(res.best_theta)
    return rho


def acquire_knowledge(p, cfg: FeatureConfig = FeatureConfig(), detections=None) -> KnowledgeBase:
    """Knowledge base for a problem or a bare sequence of 7 panels.

    ``detections`` may carry precomputed ``detect_shapes`` output per panel.
    """
    panels = _panels_of(p)
    shapes = [detect_shapes(img) for img in panels] if detections is None else [list(d) for d in detections]
    rho = extract_rotations(panels, cfg.rotation_threshold)
    scaling = extract_scaling(shapes, None, cfg.min_pts, cfg)
    per_panel = tuple(
        RelationalFeatures(rho=rho[k], chi=count_by_kind(shapes[k]), sigma=scaling.sigma[k])
        for k in range(N_PANELS)
    )
    inventory = frozenset((s.kind, s.filled) for panel in shapes for s in panel)
    return KnowledgeBase(per_panel=per_panel, shapes=inventory, sigma_informative=scaling.informative)


def _fmt_angle(a: Optional[float]) -> str:
    if a is None:
        return "NA"
    return f"{a:g}deg"


def knowledge_to_text(kb: KnowledgeBase) -> str:
    """Table-style record: one line each for shapes, rho, chi and sigma."""
    kinds = sorted({k for k, _ in kb.shapes}, key=lambda k: k.value)
    shape_names = sorted(
        (("filled " if filled else "") + kind.value for kind, filled in kb.shapes)
    )
    if kb.rho_available:
        rho = "{" + ", ".join(_fmt_angle(rf.rho) for rf in kb.per_panel) + "}"
    else:
        rho = "{NA}"
    chi = "{" + ", ".join(
        "<" + ",".join(str(rf.chi[k]) for k in kinds) + ">" for rf in kb.per_panel
    ) + "}"
    sigma = "{" + ", ".join(
        "<" + ",".join(s.display for s in rf.sigma) + ">" for rf in kb.per_panel
    ) + "}"
    lines = [
        "shapes: {" + ", ".join(shape_names) + "}",
        f"rho: {rho}",
        f"chi: {chi}",
        f"sigma: {sigma}" + ("" if kb.sigma_informative else " (non-informative)"),
    ]
    return "\n".join(lines) + "\n"
