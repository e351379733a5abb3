"""Deterministic rasterization, rotation, binarization and panel similarity.

Pixel (col, row) has its center at (col + 0.5, row + 0.5). Angles are
counter-clockwise as displayed (y grows downward on screen).
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import (
    BACKGROUND,
    RasterImage,
    RasterizationError,
    Scene,
    ShapeKind,
    StructuralError,
    Primitive,
)

STROKE_PX = 2.0
MIN_SEPARATION_PX = 2.0
STAR_INNER_RATIO = 0.5
RECT_ASPECT = 2.0

_EIGHT = np.ones((3, 3), dtype=bool)


def _unit_polygon(kind: ShapeKind) -> list[tuple[float, float]]:
    """(angle_deg, radius) pairs of a unit-circumradius polygon."""
    if kind is ShapeKind.TRIANGLE:
        return [(90.0, 1.0), (210.0, 1.0), (330.0, 1.0)]
    if kind is ShapeKind.SQUARE:
        return [(45.0, 1.0), (135.0, 1.0), (225.0, 1.0), (315.0, 1.0)]
    if kind is ShapeKind.DIAMOND:
        return [(0.0, 1.0), (90.0, 1.0), (180.0, 1.0), (270.0, 1.0)]
    if kind is ShapeKind.RECTANGLE:
        a = math.degrees(math.atan(1.0 / RECT_ASPECT))
        return [(a, 1.0), (180.0 - a, 1.0), (180.0 + a, 1.0), (360.0 - a, 1.0)]
    if kind is ShapeKind.HEXAGON:
        return [(60.0 * k, 1.0) for k in range(6)]
    if kind is ShapeKind.STAR:
        pts = []
        for k in range(5):
            pts.append((90.0 + 72.0 * k, 1.0))
            pts.append((126.0 + 72.0 * k, STAR_INNER_RATIO))
        return pts
    raise ValueError(f"{kind} is not a polygon")


def round_half_away(v):
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def primitive_geometry(prim: Primitive, width: int, height: int):
    """Pixel-space (center_x, center_y, circumradius)."""
    return prim.center[0] * width, prim.center[1] * height, prim.size * min(width, height)


def primitive_vertices(prim: Primitive, width: int, height: int) -> np.ndarray:
    """Polygon vertices in pixel space, rounded half away from zero, shape (n, 2)."""
    cx, cy, r = primitive_geometry(prim, width, height)
    out = []
    for ang, rad in _unit_polygon(prim.kind):
        a = math.radians(ang + prim.rotation_deg)
        out.append((cx + r * rad * math.cos(a), cy - r * rad * math.sin(a)))
    return round_half_away(np.array(out, dtype=np.float64))


def _extent(prim: Primitive, width: int, height: int) -> tuple[float, float, float, float]:
    if prim.kind is ShapeKind.CIRCLE:
        cx, cy, r = primitive_geometry(prim, width, height)
        return cx - r, cy - r, cx + r, cy + r
    v = primitive_vertices(prim, width, height)
    return v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max()


def check_scene(scene: Scene) -> None:
    """Raise RasterizationError if a primitive leaves the panel or primitives overlap."""
    w, h = scene.panel_size
    for i, prim in enumerate(scene.primitives):
        x0, y0, x1, y1 = _extent(prim, w, h)
        if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
            raise RasterizationError(f"primitive {i} ({prim.kind}) extends outside the {w}x{h} panel")
    geo = [primitive_geometry(p, w, h) for p in scene.primitives]
    for i in range(len(geo)):
        for j in range(i + 1, len(geo)):
            gap = math.hypot(geo[i][0] - geo[j][0], geo[i][1] - geo[j][1]) - geo[i][2] - geo[j][2]
            if gap < MIN_SEPARATION_PX:
                raise RasterizationError(f"primitives {i} and {j} overlap (gap {gap:.2f} px)")


def _inside_polygon(px: np.ndarray, py: np.ndarray, verts: np.ndarray) -> np.ndarray:
    inside = np.zeros(px.shape, dtype=bool)
    n = len(verts)
    for i in range(n):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % n]
        if y0 == y1:
            continue
        crosses = (y0 > py) != (y1 > py)
        xi = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (px < xi)
    return inside


def _dist_to_edges(px: np.ndarray, py: np.ndarray, verts: np.ndarray) -> np.ndarray:
    best = np.full(px.shape, np.inf)
    n = len(verts)
    for i in range(n):
        ax, ay = verts[i]
        bx, by = verts[(i + 1) % n]
        dx, dy = bx - ax, by - ay
        t = np.clip(((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
        best = np.minimum(best, np.hypot(px - (ax + t * dx), py - (ay + t * dy)))
    return best


def primitive_mask(prim: Primitive, width: int, height: int) -> np.ndarray:
    """Boolean ink mask of one primitive, reduced to its largest 8-connected piece."""
    ys, xs = np.mgrid[0:height, 0:width]
    px = xs + 0.5
    py = ys + 0.5
    if prim.kind is ShapeKind.CIRCLE:
        cx, cy, r = primitive_geometry(prim, width, height)
        d = np.hypot(px - cx, py - cy)
        mask = d <= r
        if not prim.filled:
            mask &= d > r - STROKE_PX
    else:
        verts = primitive_vertices(prim, width, height)
        mask = _inside_polygon(px, py, verts)
        if not prim.filled:
            mask &= _dist_to_edges(px, py, verts) < STROKE_PX
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n > 1:
        sizes = np.bincount(labels.ravel())[1:]
        mask = labels == (int(np.argmax(sizes)) + 1)
    return mask


def rasterize(scene: Scene) -> RasterImage:
    check_scene(scene)
    w, h = scene.panel_size
    ink = np.zeros((h, w), dtype=bool)
    for prim in scene.primitives:
        ink |= primitive_mask(prim, w, h)
    return RasterImage(np.where(ink, 0, BACKGROUND).astype(np.uint8))


def rotate_scene(scene: Scene, theta_deg: float) -> Scene:
    """Rotate every primitive about the panel center (square panels keep aspect)."""
    w, h = scene.panel_size
    a = math.radians(theta_deg)
    c, s = math.cos(a), math.sin(a)
    prims = []
    for p in scene.primitives:
        dx = (p.center[0] - 0.5) * w
        dy = (p.center[1] - 0.5) * h
        nx = 0.5 + (c * dx + s * dy) / w
        ny = 0.5 + (-s * dx + c * dy) / h
        prims.append(
            Primitive(
                kind=p.kind,
                center=(min(max(nx, 0.0), 1.0), min(max(ny, 0.0), 1.0)),
                size=p.size,
                rotation_deg=(p.rotation_deg + theta_deg) % 360.0,
                filled=p.filled,
            )
        )
    return Scene(scene.panel_size, tuple(prims))


@lru_cache(maxsize=8)
def _pixel_offsets(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:height, 0:width]
    return (xs + 0.5 - width / 2.0).ravel(), (ys + 0.5 - height / 2.0).ravel()


def _bilinear_geometry(width: int, height: int, thetas: tuple[float, ...]):
    """Gather indices into the 1-px padded source and bilinear weights."""
    ox, oy = _pixel_offsets(width, height)
    rad = [math.radians(t) for t in thetas]
    c = np.array([math.cos(a) for a in rad])[:, None]
    s = np.array([math.sin(a) for a in rad])[:, None]
    # Inverse map: output pixel offset -> source continuous index coordinates.
    u = (c * ox - s * oy) + (width / 2.0 - 0.5)
    v = (s * ox + c * oy) + (height / 2.0 - 0.5)
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = u - u0
    fv = v - v0
    # Padded coordinates; anything beyond the 1-px border clips onto background.
    x0 = np.clip(u0 + 1, 0, width + 1).astype(np.int32)
    x1 = np.clip(u0 + 2, 0, width + 1).astype(np.int32)
    y0 = np.clip(v0 + 1, 0, height + 1).astype(np.int32)
    y1 = np.clip(v0 + 2, 0, height + 1).astype(np.int32)
    stride = width + 2
    idx = np.stack([y0 * stride + x0, y0 * stride + x1, y1 * stride + x0, y1 * stride + x1])
    wts = np.stack([(1.0 - fu) * (1.0 - fv), fu * (1.0 - fv), (1.0 - fu) * fv, fu * fv])
    return idx, wts


@lru_cache(maxsize=2)
def _orbit_geometry(width: int, height: int):
    return _bilinear_geometry(width, height, tuple(float(t) for t in range(360)))


def _bilinear(pixels: np.ndarray, idx: np.ndarray, wts: np.ndarray) -> np.ndarray:
    h, w = pixels.shape
    pad = np.full((h + 2, w + 2), float(BACKGROUND))
    pad[1:-1, 1:-1] = pixels
    flat = pad.ravel()
    val = (
        flat[idx[0]] * wts[0]
        + flat[idx[1]] * wts[1]
        + flat[idx[2]] * wts[2]
        + flat[idx[3]] * wts[3]
    )
    return np.clip(np.floor(val + 0.5), 0, 255).astype(np.uint8)


def rotate_many(pixels: np.ndarray, thetas: Sequence[float]) -> np.ndarray:
    """Rotate a (H, W) uint8 array by each angle; returns (n, H, W) uint8.

    Row k is bit-identical to rotating by ``thetas[k]`` alone.
    """
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    thetas = [float(t) % 360.0 for t in thetas]
    out = np.empty((len(thetas), h, w), dtype=np.uint8)
    general = []
    for k, t in enumerate(thetas):
        if t == 0.0:
            out[k] = pixels
        elif w == h and t in (90.0, 180.0, 270.0):
            out[k] = np.rot90(pixels, int(t // 90))
        else:
            general.append(k)
    if not general:
        return out
    angles = [thetas[k] for k in general]
    if all(a.is_integer() for a in angles):
        idx, wts = _orbit_geometry(w, h)
        rows = np.array([int(a) for a in angles])
        idx, wts = idx[:, rows], wts[:, rows]
    else:
        idx, wts = _bilinear_geometry(w, h, tuple(angles))
    out[general] = _bilinear(pixels, idx, wts).reshape(len(general), h, w)
    return out


def rotate_image(img: RasterImage, theta_deg: float) -> RasterImage:
    """Bilinear rotation about the panel center with white fill.

    Multiples of 90 degrees on square panels are exact pixel permutations.
    """
    return RasterImage(rotate_many(img.pixels, [theta_deg])[0])


def _ncc_from_sums(n: int, sa, sb, sab):
    """NCC of two binary vectors from integer sums; vectorizes over sb/sab."""
    va = n * sa - sa * sa
    vb = n * sb - sb * sb
    num = n * sab - sa * sb
    return va, vb, num


def similarity(a: RasterImage, b: RasterImage) -> float:
    """Normalized cross-correlation of the binarized panels, in [-1, 1].

    Blank vs blank is 1.0; blank (or otherwise uniform) vs non-uniform is 0.0.
    """
    if a.shape != b.shape:
        raise StructuralError(f"similarity of {a.shape} and {b.shape} panels")
    ma = a.ink_mask().ravel()
    mb = b.ink_mask().ravel()
    n = int(ma.size)
    sa, sb, sab = int(ma.sum()), int(mb.sum()), int(np.count_nonzero(ma & mb))
    va, vb, num = _ncc_from_sums(n, sa, sb, sab)
    if va == 0 or vb == 0:
        return 1.0 if (va == 0 and vb == 0 and sa == sb) else 0.0
    if va == vb and num == va:
        return 1.0
    return max(-1.0, min(1.0, num / math.sqrt(va * vb)))


def similarity_to_stack(stack_masks: np.ndarray, query: RasterImage) -> np.ndarray:
    """Similarity of ``query`` against each (H, W) boolean mask in ``stack_masks``.

    Matches ``similarity`` element-for-element.
    """
    n_img = stack_masks.shape[0]
    flat = stack_masks.reshape(n_img, -1)
    q = query.ink_mask().ravel()
    if flat.shape[1] != q.size:
        raise StructuralError("dimension mismatch in similarity_to_stack")
    n = int(q.size)
    sq = int(q.sum())
    ss = flat.sum(axis=1).astype(np.int64)
    sqs = flat[:, q].sum(axis=1).astype(np.int64)
    vs, vq, num = _ncc_from_sums(n, ss, sq, sqs)
    out = np.empty(n_img, dtype=np.float64)
    for k in range(n_img):
        a_var, b_var, nm = int(vs[k]), int(vq), int(num[k])
        if a_var == 0 or b_var == 0:
            out[k] = 1.0 if (a_var == 0 and b_var == 0 and int(ss[k]) == sq) else 0.0
        elif a_var == b_var and nm == a_var:
            out[k] = 1.0
        else:
            out[k] = max(-1.0, min(1.0, nm / math.sqrt(a_var * b_var)))
    return out


# --- PGM (P5) ---------------------------------------------------------------


def encode_pgm(img: RasterImage) -> bytes:
    return b"P5\n%d %d\n255\n" % (img.width, img.height) + img.to_bytes()


def decode_pgm(data: bytes) -> RasterImage:
    """Parse a binary P5 PGM with maxval 255 (comments allowed in the header)."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise StructuralError("truncated PGM header")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise StructuralError(f"unsupported PGM magic {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise StructuralError("non-numeric PGM header field") from exc
    if maxval != 255:
        raise StructuralError(f"unsupported PGM maxval {maxval}")
    body = data[pos + 1 :]
    if len(body) != width * height:
        raise StructuralError(f"PGM body has {len(body)} bytes, expected {width * height}")
    return RasterImage.from_bytes(width, height, body)


def read_pgm(path) -> RasterImage:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())


def write_pgm(path, img: RasterImage) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(img))
