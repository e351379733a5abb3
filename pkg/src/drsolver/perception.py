"""Classical shape detection on clean binary panels.

Each 8-connected ink component becomes one detection. The kind comes from
the outer contour: dominant points (Ramer-Douglas-Peucker, tolerance 2% of
the perimeter) give the corner count and convexity, circularity separates
round blobs, and quadrilaterals are split by aspect ratio and orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull
from skimage import measure

from .core import DetectedShape, Primitive, RasterImage, ShapeKind, zero_counts

DP_TOLERANCE = 0.02
CIRCULARITY_ROUND = 0.85
FILL_COVERAGE = 0.5
RECT_ASPECT_SPLIT = 1.45
MIN_TOLERANCE_PX = 1.0
MERGE_FRACTION = 0.06
BLUNT_TIP_RATIO = 0.35
HEX_HARMONIC = 0.039

_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class ComponentMask:
    label: int
    mask: np.ndarray  # boolean, cropped to bbox
    bbox: tuple[int, int, int, int]
    area: int
    perimeter: float
    hole_count: int


def components(img: RasterImage) -> list[ComponentMask]:
    """Maximal 8-connected ink regions, labelled 1..N in raster-scan order."""
    labels, n = ndimage.label(img.ink_mask(), structure=_EIGHT)
    out = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = sl
        mask = labels[sl] == lab
        out.append(
            ComponentMask(
                label=lab,
                mask=mask,
                bbox=(xs.start, ys.start, xs.stop, ys.stop),
                area=int(mask.sum()),
                perimeter=_perimeter(mask),
                hole_count=_holes(mask),
            )
        )
    return out


def _holes(mask: np.ndarray) -> int:
    padded = np.pad(~mask, 1, constant_values=True)
    _, n_bg = ndimage.label(padded, structure=_FOUR)
    return n_bg - 1


def _outer_contour(mask: np.ndarray) -> np.ndarray:
    """Closed outer boundary as (x, y) points, ordered along the curve."""
    solid = ndimage.binary_fill_holes(mask)
    contours = measure.find_contours(np.pad(solid, 1).astype(float), 0.5)
    c = max(contours, key=len)
    pts = np.column_stack([c[:, 1] - 1.0, c[:, 0] - 1.0])
    if np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    return pts


def _perimeter(mask: np.ndarray) -> float:
    pts = _outer_contour(mask)
    return float(np.sum(np.hypot(*(np.roll(pts, -1, axis=0) - pts).T)))


def _polygon_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _rdp(pts: np.ndarray, tol: float) -> list[int]:
    """Indices of open-polyline dominant points (endpoints kept)."""
    keep = [0, len(pts) - 1]
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        a, b = pts[i], pts[j]
        seg = pts[i + 1 : j]
        d = b - a
        norm = math.hypot(d[0], d[1])
        if norm == 0.0:
            dist = np.hypot(*(seg - a).T)
        else:
            dist = np.abs(d[0] * (seg[:, 1] - a[1]) - d[1] * (seg[:, 0] - a[0])) / norm
        k = int(np.argmax(dist))
        if dist[k] > tol:
            m = i + 1 + k
            keep.append(m)
            stack.append((i, m))
            stack.append((m, j))
    return sorted(set(keep))


def dominant_points(contour: np.ndarray, tol: float) -> np.ndarray:
    """Dominant points of a closed contour, anchored at its two most distant points."""
    centroid = contour.mean(axis=0)
    i0 = int(np.argmax(np.hypot(*(contour - centroid).T)))
    ring = np.roll(contour, -i0, axis=0)
    i1 = int(np.argmax(np.hypot(*(ring - ring[0]).T)))
    first = _rdp(ring[: i1 + 1], tol)
    second = _rdp(np.vstack([ring[i1:], ring[:1]]), tol)
    idx = first + [i1 + k for k in second[1:-1]]
    verts = ring[idx]
    perim = float(np.sum(np.hypot(*(np.roll(contour, -1, axis=0) - contour).T)))
    # Blunted pixel tips show up as two vertices a pixel or two apart.
    while len(verts) > 3:
        gaps = np.hypot(*(np.roll(verts, -1, axis=0) - verts).T)
        k = int(np.argmin(gaps))
        if gaps[k] >= MERGE_FRACTION * perim:
            break
        j = (k + 1) % len(verts)
        verts[k] = (verts[k] + verts[j]) / 2.0
        verts = np.delete(verts, j, axis=0)
    # Drop near-collinear vertices left over from the anchor choice.
    changed = True
    while changed and len(verts) > 3:
        changed = False
        for k in range(len(verts)):
            p, q, r = verts[k - 1], verts[k], verts[(k + 1) % len(verts)]
            if _seg_dist(q, p, r) <= tol:
                verts = np.delete(verts, k, axis=0)
                changed = True
                break
    return verts


def _seg_dist(q, a, b) -> float:
    d = b - a
    n2 = float(d @ d)
    if n2 == 0.0:
        return float(np.hypot(*(q - a)))
    t = min(1.0, max(0.0, float((q - a) @ d) / n2))
    return float(np.hypot(*(q - (a + t * d))))


def _turns(verts: np.ndarray) -> np.ndarray:
    prev = verts - np.roll(verts, 1, axis=0)
    nxt = np.roll(verts, -1, axis=0) - verts
    return prev[:, 0] * nxt[:, 1] - prev[:, 1] * nxt[:, 0]


def _six_fold(contour: np.ndarray) -> float:
    """Magnitude of the 6th angular harmonic of the radius, relative to the mean radius."""
    d = contour - contour.mean(axis=0)
    r = np.hypot(d[:, 0], d[:, 1])
    phi = np.arctan2(d[:, 1], d[:, 0])
    seg = np.hypot(*(np.roll(contour, -1, axis=0) - contour).T)
    w = seg / seg.sum()
    return float(abs(np.sum(w * r * np.exp(-6j * phi))) / np.sum(w * r))


def _quad_kind(verts: np.ndarray) -> tuple[ShapeKind, float]:
    sides = np.hypot(*(np.roll(verts, -1, axis=0) - verts).T)
    if sides.min() < BLUNT_TIP_RATIO * sides.max():
        return ShapeKind.TRIANGLE, 0.6
    a = (sides[0] + sides[2]) / 2.0
    b = (sides[1] + sides[3]) / 2.0
    aspect = max(a, b) / max(min(a, b), 1e-9)
    if aspect > RECT_ASPECT_SPLIT:
        return ShapeKind.RECTANGLE, min(1.0, (aspect - 1.0) / (RECT_ASPECT_SPLIT - 1.0) / 2.0 + 0.5)
    # Orientation of the edges modulo 90 degrees: ~0 for squares, ~45 for diamonds.
    edge = np.roll(verts, -1, axis=0) - verts
    ang = np.degrees(np.arctan2(edge[:, 1], edge[:, 0])) % 90.0
    off = float(np.mean(np.minimum(ang, 90.0 - ang)))
    if off > 22.5:
        return ShapeKind.DIAMOND, min(1.0, 0.5 + (off - 22.5) / 45.0)
    return ShapeKind.SQUARE, min(1.0, 0.5 + (22.5 - off) / 45.0)


def classify_component(comp: ComponentMask) -> tuple[ShapeKind, float]:
    """(kind, confidence) for one component from its outer contour."""
    contour = _outer_contour(comp.mask)
    if len(contour) < 8:
        return ShapeKind.CIRCLE, 0.2
    perim = float(np.sum(np.hypot(*(np.roll(contour, -1, axis=0) - contour).T)))
    area = _polygon_area(contour)
    circularity = 4.0 * math.pi * area / (perim * perim)
    verts = dominant_points(contour, max(DP_TOLERANCE * perim, MIN_TOLERANCE_PX))
    n = len(verts)
    turns = _turns(verts)
    orient = np.sign(np.sum(turns))
    concave = int(np.sum(np.sign(turns) == -orient))
    if concave >= 2:
        return ShapeKind.STAR, 0.9 if concave in (4, 5) and n in (9, 10, 11) else 0.55
    if n == 3:
        return ShapeKind.TRIANGLE, 0.95
    if n == 4:
        return _quad_kind(verts)
    # Five or more corners without concavities: circle or hexagon. A hexagon's
    # radial profile carries a strong six-fold harmonic, a digital circle's does not.
    h6 = _six_fold(contour)
    if h6 < HEX_HARMONIC:
        conf = 0.5 + 0.5 * (HEX_HARMONIC - h6) / HEX_HARMONIC
        return ShapeKind.CIRCLE, conf if circularity > CIRCULARITY_ROUND else conf * 0.9
    return ShapeKind.HEXAGON, min(1.0, 0.5 + 0.5 * (h6 - HEX_HARMONIC) / HEX_HARMONIC)


def _hull_area(mask: np.ndarray) -> float:
    ys, xs = np.nonzero(mask)
    pts = np.column_stack([xs, ys]).astype(float)
    # Pixel squares, not centers: take the hull of all four corners.
    corners = np.vstack([pts, pts + [1, 0], pts + [0, 1], pts + [1, 1]])
    return float(ConvexHull(corners).volume)


def is_filled(comp: ComponentMask) -> bool:
    return comp.hole_count == 0 and comp.area >= FILL_COVERAGE * _hull_area(comp.mask)


def detect_shapes(img: RasterImage) -> list[DetectedShape]:
    """One detection per ink component, in raster-scan order of first pixel."""
    out = []
    for comp in components(img):
        kind, conf = classify_component(comp)
        out.append(
            DetectedShape(kind=kind, filled=is_filled(comp), bbox=comp.bbox, confidence=float(conf))
        )
    return out


def count_by_kind(shapes: Iterable[DetectedShape]) -> dict[ShapeKind, int]:
    counts = zero_counts()
    for s in shapes:
        counts[s.kind] += 1
    return counts


def expected_kind(prim: Primitive) -> ShapeKind:
    """Kind a correct detector should report for a primitive.

    A square turned near 45 degrees is a diamond and vice versa.
    """
    if prim.kind in (ShapeKind.SQUARE, ShapeKind.DIAMOND):
        off = prim.rotation_deg % 90.0
        tilted = 22.5 < off < 67.5
        if prim.kind is ShapeKind.SQUARE:
            return ShapeKind.DIAMOND if tilted else ShapeKind.SQUARE
        return ShapeKind.SQUARE if tilted else ShapeKind.DIAMOND
    return prim.kind


def match_detections(
    primitives: Sequence[Primitive], shapes: Sequence[DetectedShape], width: int, height: int
) -> list[int]:
    """For each primitive, the index of the detection whose bbox holds its center (-1 if none)."""
    out = []
    for p in primitives:
        cx, cy = p.center[0] * width, p.center[1] * height
        hit = -1
        best = math.inf
        for i, s in enumerate(shapes):
            x0, y0, x1, y1 = s.bbox
            if x0 <= cx <= x1 and y0 <= cy <= y1:
                d = math.hypot((x0 + x1) / 2 - cx, (y0 + y1) / 2 - cy)
                if d < best:
                    best, hit = d, i
        out.append(hit)
    return out
