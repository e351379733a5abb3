"""Shared domain types for 4x1 diagrammatic-reasoning problems.

A problem is seven raster panels: three question panels followed by four
answer options. Everything here is immutable once constructed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

BINARY_THRESHOLD = 128
BACKGROUND = 255
INK = 0
N_PANELS = 7
OPTION_INDICES = (4, 5, 6, 7)


class DRError(Exception):
    """Base class for all errors raised by this package."""


class StructuralError(DRError, ValueError):
    """Malformed data: wrong panel count, mismatched dimensions, bad shapes."""


class RasterizationError(DRError, ValueError):
    pass


class GenerationError(DRError):
    pass


class ConfigurationError(DRError):
    pass


class TrainingError(DRError):
    """Training diverged; ``diagnostics`` carries the loss history."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CorpusError(DRError):
    pass


class ShapeKind(enum.Enum):
    CIRCLE = "circle"
    TRIANGLE = "triangle"
    RECTANGLE = "rectangle"
    SQUARE = "square"
    DIAMOND = "diamond"
    STAR = "star"
    HEXAGON = "hexagon"

    def __str__(self) -> str:
        return self.value


class Category(enum.Enum):
    RT = "RT"
    CT = "CT"
    SS = "SS"
    OT = "OT"

    @property
    def is_category1(self) -> bool:
        return self is not Category.OT

    def __str__(self) -> str:
        return self.value


CATEGORIES = (Category.RT, Category.CT, Category.SS, Category.OT)


class SizeLabel(enum.IntEnum):
    """Ordered size vocabulary used for relative scaling."""

    NIL = 0
    TINY = 1
    SMALL = 2
    NORMAL = 3
    LARGE = 4
    VERY_LARGE = 5

    @property
    def display(self) -> str:
        return _SIZE_NAMES[self]

    @classmethod
    def parse(cls, name: str) -> "SizeLabel":
        for label, text in _SIZE_NAMES.items():
            if text == name:
                return label
        raise ValueError(f"unknown size label {name!r}")


_SIZE_NAMES = {
    SizeLabel.NIL: "Nil",
    SizeLabel.TINY: "Tiny",
    SizeLabel.SMALL: "Small",
    SizeLabel.NORMAL: "Normal",
    SizeLabel.LARGE: "Large",
    SizeLabel.VERY_LARGE: "VeryLarge",
}


@dataclass(frozen=True)
class Primitive:
    """One shape in a scene, in normalized panel coordinates.

    ``size`` is the circumradius as a fraction of the panel's smaller side.
    ``rotation_deg`` is counter-clockwise as displayed.
    """

    kind: ShapeKind
    center: tuple[float, float]
    size: float
    rotation_deg: float = 0.0
    filled: bool = True

    def __post_init__(self):
        x, y = self.center
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise StructuralError(f"center {self.center} outside [0,1]^2")
        if not (0.0 < self.size <= 1.0):
            raise StructuralError(f"size {self.size} outside (0,1]")
        if not (0.0 <= self.rotation_deg < 360.0):
            raise StructuralError(f"rotation {self.rotation_deg} outside [0,360)")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "center": [self.center[0], self.center[1]],
            "size": self.size,
            "rotation_deg": self.rotation_deg,
            "filled": self.filled,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Primitive":
        return cls(
            kind=ShapeKind(d["kind"]),
            center=(float(d["center"][0]), float(d["center"][1])),
            size=float(d["size"]),
            rotation_deg=float(d["rotation_deg"]),
            filled=bool(d["filled"]),
        )


@dataclass(frozen=True)
class Scene:
    panel_size: tuple[int, int]
    primitives: tuple[Primitive, ...] = ()

    def __post_init__(self):
        w, h = self.panel_size
        if w < 32 or h < 32:
            raise StructuralError(f"panel size {self.panel_size} below 32x32")
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def to_dict(self) -> dict:
        return {
            "panel_size": list(self.panel_size),
            "primitives": [p.to_dict() for p in self.primitives],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scene":
        return cls(
            panel_size=(int(d["panel_size"][0]), int(d["panel_size"][1])),
            primitives=tuple(Primitive.from_dict(p) for p in d["primitives"]),
        )


class RasterImage:
    """8-bit grayscale panel, white background (255) and black ink (0)."""

    __slots__ = ("_pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels)
        if arr.ndim != 2:
            raise StructuralError(f"expected 2-D pixel array, got shape {arr.shape}")
        arr = np.array(arr, dtype=np.uint8, copy=True)
        arr.setflags(write=False)
        self._pixels = arr

    @classmethod
    def blank(cls, width: int, height: int) -> "RasterImage":
        return cls(np.full((height, width), BACKGROUND, dtype=np.uint8))

    @classmethod
    def from_bytes(cls, width: int, height: int, data: bytes) -> "RasterImage":
        if len(data) != width * height:
            raise StructuralError(
                f"pixel buffer of {len(data)} bytes does not match {width}x{height}"
            )
        return cls(np.frombuffer(data, dtype=np.uint8).reshape(height, width))

    @property
    def pixels(self) -> np.ndarray:
        """Read-only (height, width) array."""
        return self._pixels

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self._pixels.shape

    def to_bytes(self) -> bytes:
        return self._pixels.tobytes()

    def ink_mask(self) -> np.ndarray:
        return self._pixels < BINARY_THRESHOLD

    def binarized(self) -> "RasterImage":
        return RasterImage(np.where(self.ink_mask(), INK, BACKGROUND).astype(np.uint8))

    def is_blank(self) -> bool:
        return not self.ink_mask().any()

    def __eq__(self, other) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._pixels, other._pixels)

    def __hash__(self) -> int:
        return hash((self.shape, self._pixels.tobytes()))

    def __repr__(self) -> str:
        return f"RasterImage({self.width}x{self.height}, ink={int(self.ink_mask().sum())})"


@dataclass(frozen=True)
class ProblemSpace:
    """Seven panels: question = panels 1..3, options = panels 4..7."""

    panels: tuple[RasterImage, ...]
    answer_index: int
    scenes: Optional[tuple[Scene, ...]] = None
    true_category: Optional[Category] = None
    problem_id: str = ""

    def __post_init__(self):
        panels = tuple(self.panels)
        if len(panels) != N_PANELS:
            raise StructuralError(f"problem needs {N_PANELS} panels, got {len(panels)}")
        if len({p.shape for p in panels}) != 1:
            raise StructuralError("panels differ in size")
        if self.answer_index not in OPTION_INDICES:
            raise StructuralError(f"answer_index {self.answer_index} not in 4..7")
        object.__setattr__(self, "panels", panels)
        if self.scenes is not None:
            scenes = tuple(self.scenes)
            if len(scenes) != N_PANELS:
                raise StructuralError("scenes must cover all 7 panels")
            object.__setattr__(self, "scenes", scenes)

    @property
    def question(self) -> tuple[RasterImage, ...]:
        return self.panels[:3]

    @property
    def options(self) -> tuple[RasterImage, ...]:
        return self.panels[3:]

    @property
    def answer_letter(self) -> str:
        return "ABCD"[self.answer_index - 4]

    def panel(self, index: int) -> RasterImage:
        """1-based panel access."""
        return self.panels[index - 1]


def split_problem(p) -> tuple[tuple[RasterImage, ...], tuple[RasterImage, ...]]:
    """Partition a problem (or a bare 7-panel sequence) into (question, options)."""
    panels = p.panels if isinstance(p, ProblemSpace) else tuple(p)
    if len(panels) != N_PANELS:
        raise StructuralError(f"problem needs {N_PANELS} panels, got {len(panels)}")
    return tuple(panels[:3]), tuple(panels[3:])


@dataclass(frozen=True)
class DetectedShape:
    kind: ShapeKind
    filled: bool
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 with x1, y1 exclusive
    confidence: float

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x1 > x0 and y1 > y0):
            raise StructuralError(f"degenerate bbox {self.bbox}")
        if not (0.0 <= self.confidence <= 1.0):
            raise StructuralError(f"confidence {self.confidence} outside [0,1]")

    @property
    def area(self) -> int:
        x0, y0, x1, y1 = self.bbox
        return (x1 - x0) * (y1 - y0)


def zero_counts() -> dict[ShapeKind, int]:
    return {k: 0 for k in ShapeKind}


@dataclass(frozen=True)
class RelationalFeatures:
    """Per-panel relational features.

    ``rho`` is None when rotation is not applicable (NA). ``sigma`` holds one
    size label per detected shape, in detection order; a panel without shapes
    has ``sigma == (SizeLabel.NIL,)``.
    """

    rho: Optional[float]
    chi: Mapping[ShapeKind, int] = field(default_factory=zero_counts)
    sigma: tuple[SizeLabel, ...] = (SizeLabel.NIL,)

    def __post_init__(self):
        if self.rho is not None and not (0.0 <= self.rho < 360.0):
            raise StructuralError(f"rho {self.rho} outside [0,360)")
        chi = zero_counts()
        for k, v in dict(self.chi).items():
            if v < 0:
                raise StructuralError("negative count")
            chi[ShapeKind(k)] = int(v)
        object.__setattr__(self, "chi", chi)
        object.__setattr__(self, "sigma", tuple(SizeLabel(s) for s in self.sigma))

    @property
    def total_count(self) -> int:
        return sum(self.chi.values())

    @property
    def sigma_level(self) -> float:
        """Mean ordinal of the panel's size labels (0 for an empty panel)."""
        return float(np.mean([int(s) for s in self.sigma])) if self.sigma else 0.0

    def __hash__(self):
        return hash((self.rho, tuple(sorted((k.value, v) for k, v in self.chi.items())), self.sigma))


@dataclass(frozen=True)
class KnowledgeBase:
    per_panel: tuple[RelationalFeatures, ...]
    shapes: frozenset = frozenset()  # of (ShapeKind, filled)
    sigma_informative: bool = True

    def __post_init__(self):
        per_panel = tuple(self.per_panel)
        if len(per_panel) != N_PANELS:
            raise StructuralError(f"knowledge base needs {N_PANELS} panels")
        object.__setattr__(self, "per_panel", per_panel)
        object.__setattr__(self, "shapes", frozenset(self.shapes))

    @property
    def question(self) -> tuple[RelationalFeatures, ...]:
        return self.per_panel[:3]

    @property
    def options(self) -> tuple[RelationalFeatures, ...]:
        return self.per_panel[3:]

    @property
    def rho_available(self) -> bool:
        return all(rf.rho is not None for rf in self.per_panel)


@dataclass(frozen=True, eq=False)
class Prediction:
    chosen_option: int
    score_per_option: tuple[float, float, float, float]
    predicted_rf: Optional[RelationalFeatures] = None
    predicted_vector: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.predicted_rf is None) == (self.predicted_vector is None):
            raise StructuralError("exactly one of predicted_rf / predicted_vector must be set")
        scores = tuple(float(s) for s in self.score_per_option)
        if len(scores) != 4:
            raise StructuralError("need one score per option")
        object.__setattr__(self, "score_per_option", scores)
        if self.chosen_option != best_option(scores):
            raise StructuralError("chosen_option must be the argmax of score_per_option")
        if self.predicted_vector is not None:
            vec = np.array(self.predicted_vector, dtype=np.float64)
            vec.setflags(write=False)
            object.__setattr__(self, "predicted_vector", vec)


def best_option(scores: Sequence[float]) -> int:
    """Option index 4..7 with the highest score; the lowest index wins ties."""
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return OPTION_INDICES[best]
