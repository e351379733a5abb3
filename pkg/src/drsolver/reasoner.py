"""Problem classification, next-panel prediction, option matching and solving.

Rotation, counting and scaling problems are predicted from relational
features with one sequence regressor per category. Everything else goes
through an encoder/decoder over down-sampled panel images, and the option
closest to the predicted image vector wins.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import (
    CATEGORIES,
    N_PANELS,
    OPTION_INDICES,
    Category,
    ConfigurationError,
    DRError,
    KnowledgeBase,
    Prediction,
    ProblemSpace,
    RasterImage,
    RelationalFeatures,
    ShapeKind,
    SizeLabel,
    StructuralError,
    best_option,
    zero_counts,
)
from .features import FeatureConfig, acquire_knowledge
from .seqnet import (
    EncoderDecoder,
    SeqModel,
    SequenceRegressor,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)

COUNT_SCALE = 12.0
SIGMA_SCALE = 6.0
PREDICTORS = ("lstm", "arithmetic")
ABLATIONS = ("none", "image_only", "rf_encoder_decoder")
IMAGE_KEY = "IMG"


@dataclass(frozen=True)
class SolverConfig:
    features: FeatureConfig = FeatureConfig()
    grid: int = 16
    rf_hidden: int = 16
    image_hidden: int = 32
    rf_train: TrainConfig = TrainConfig(learning_rate=0.5, epochs=1000, batch_size=4)
    image_train: TrainConfig = TrainConfig(learning_rate=0.5, epochs=300, batch_size=16)
    augment_images: bool = True
    predictor: str = "lstm"
    ablation: str = "none"
    checkpoints: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.grid < 8:
            raise ConfigurationError("grid size must be >= 8")
        if self.predictor not in PREDICTORS:
            raise ConfigurationError(f"unknown predictor {self.predictor!r}")
        if self.ablation not in ABLATIONS:
            raise ConfigurationError(f"unknown ablation {self.ablation!r}")

    def with_seed(self, seed: int) -> "SolverConfig":
        return replace(
            self,
            rf_train=replace(self.rf_train, seed=seed),
            image_train=replace(self.image_train, seed=seed),
        )

    def to_dict(self) -> dict:
        return {
            "features": self.features.to_dict(),
            "grid": self.grid,
            "rf_hidden": self.rf_hidden,
            "image_hidden": self.image_hidden,
            "rf_train": self.rf_train.to_dict(),
            "image_train": self.image_train.to_dict(),
            "augment_images": self.augment_images,
            "predictor": self.predictor,
            "ablation": self.ablation,
            "checkpoints": dict(sorted(self.checkpoints.items())),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SolverConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown solver config keys: {sorted(unknown)}")
        try:
            if "features" in d:
                d["features"] = FeatureConfig(**d["features"])
            for k in ("rf_train", "image_train"):
                if k in d:
                    d[k] = TrainConfig(**d[k])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"invalid solver config: {exc}") from exc


# --- classification -------------------------------------------------------------


def _sigma_key(rf: RelationalFeatures) -> tuple[int, ...]:
    return tuple(sorted(int(s) for s in rf.sigma))


def classify(kb: KnowledgeBase) -> Category:
    """Decision cascade on the three question panels: rotation, count, size, other."""
    q = kb.question
    rhos = [rf.rho for rf in q]
    if all(r is not None for r in rhos) and len(set(rhos)) > 1:
        return Category.RT
    if len({rf.total_count for rf in q}) > 1:
        return Category.CT
    if kb.sigma_informative and len({_sigma_key(rf) for rf in q}) > 1:
        return Category.SS
    return Category.OT


# --- relational-feature encodings ----------------------------------------------------


def rf_dim(category: Category) -> int:
    return 2 if category is Category.RT else 1


def encode_rf(category: Category, rf: RelationalFeatures) -> np.ndarray:
    if category is Category.RT:
        if rf.rho is None:
            raise StructuralError("rotation is not available for this panel")
        a = math.radians(rf.rho)
        return np.array([math.sin(a), math.cos(a)])
    if category is Category.CT:
        return np.array([rf.total_count / COUNT_SCALE])
    if category is Category.SS:
        return np.array([rf.sigma_level / SIGMA_SCALE])
    raise StructuralError(f"{category} has no relational encoding")


def _dominant_kind(kb_question: Sequence[RelationalFeatures]) -> ShapeKind:
    totals = zero_counts()
    for rf in kb_question:
        for k, v in rf.chi.items():
            totals[k] += v
    return max(totals, key=lambda k: (totals[k], -list(ShapeKind).index(k)))


def decode_rf(category: Category, vec, question: Sequence[RelationalFeatures] = ()) -> RelationalFeatures:
    vec = np.asarray(vec, dtype=np.float64)
    if category is Category.RT:
        deg = math.degrees(math.atan2(vec[0], vec[1])) % 360.0
        return RelationalFeatures(rho=0.0 if deg >= 360.0 else deg)
    if category is Category.CT:
        n = max(0, int(round(float(vec[0]) * COUNT_SCALE)))
        chi = zero_counts()
        chi[_dominant_kind(question) if question else ShapeKind.CIRCLE] = n
        return RelationalFeatures(rho=None, chi=chi)
    if category is Category.SS:
        level = min(max(int(round(float(vec[0]) * SIGMA_SCALE)), 0), int(SizeLabel.VERY_LARGE))
        return RelationalFeatures(rho=None, sigma=(SizeLabel(level),))
    raise StructuralError(f"{category} has no relational encoding")


def angular_distance(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def arithmetic_next(category: Category, question: Sequence[RelationalFeatures]) -> RelationalFeatures:
    """Linear extrapolation of the question progression (diagnostic oracle)."""
    if category is Category.RT:
        r = [rf.rho for rf in question]
        step = ((r[2] - r[1] + 180.0) % 360.0) - 180.0
        return RelationalFeatures(rho=(r[2] + step) % 360.0)
    if category is Category.CT:
        c = [rf.total_count for rf in question]
        chi = zero_counts()
        chi[_dominant_kind(question)] = max(0, 2 * c[2] - c[1])
        return RelationalFeatures(rho=None, chi=chi)
    if category is Category.SS:
        # Labels are ordinal, not evenly spaced: step one rung further the same way.
        s = [rf.sigma_level for rf in question]
        step = int(np.sign(s[2] - s[1]))
        level = min(max(int(round(s[2])) + step, int(SizeLabel.TINY)), int(SizeLabel.VERY_LARGE))
        return RelationalFeatures(rho=None, sigma=(SizeLabel(level),))
    raise StructuralError(f"{category} has no relational encoding")


# --- image vectors ------------------------------------------------------------------


def _bin_edges(n: int, bins: int) -> np.ndarray:
    return (np.arange(bins) * n) // bins


def image_vector(img: RasterImage, grid: int = 16) -> np.ndarray:
    """Mean-pooled ink fraction on a grid x grid layout (0 = background, 1 = ink)."""
    if grid > min(img.width, img.height):
        raise ConfigurationError(f"grid {grid} is finer than the {img.width}x{img.height} panel")
    ink = 1.0 - img.pixels.astype(np.float64) / 255.0
    rows = _bin_edges(img.height, grid)
    cols = _bin_edges(img.width, grid)
    sums = np.add.reduceat(np.add.reduceat(ink, rows, axis=0), cols, axis=1)
    counts = np.outer(np.diff(np.append(rows, img.height)), np.diff(np.append(cols, img.width)))
    return (sums / counts).ravel()


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.sqrt(a @ a))
    nb = float(np.sqrt(b @ b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


# --- matching -------------------------------------------------------------------------


def rf_distance(category: Category, predicted: RelationalFeatures, option: RelationalFeatures) -> float:
    if category is Category.RT:
        if predicted.rho is None or option.rho is None:
            return math.inf
        return angular_distance(predicted.rho, option.rho)
    if category is Category.CT:
        return float(abs(predicted.total_count - option.total_count))
    if category is Category.SS:
        return abs(predicted.sigma_level - option.sigma_level)
    raise StructuralError(f"{category} has no relational distance")


def match(scores: Sequence[float]) -> int:
    """Option index (4..7) with the best score; lowest index on ties."""
    return best_option(scores)


def match_rf(category: Category, predicted: RelationalFeatures, options: Sequence[RelationalFeatures]) -> Prediction:
    scores = tuple(0.0 - rf_distance(category, predicted, o) for o in options)
    return Prediction(chosen_option=match(scores), score_per_option=scores, predicted_rf=predicted)


def match_vector(predicted: np.ndarray, option_vectors: Sequence[np.ndarray]) -> Prediction:
    scores = tuple(cosine(predicted, v) for v in option_vectors)
    return Prediction(chosen_option=match(scores), score_per_option=scores, predicted_vector=predicted)


# --- models -----------------------------------------------------------------------------


@dataclass
class SolverModels:
    """Trained predictors keyed by category name, or IMAGE_KEY for the image-only ablation."""

    models: dict[str, SeqModel] = field(default_factory=dict)

    def get(self, key: str) -> SeqModel:
        if key not in self.models:
            raise ConfigurationError(f"no trained model for {key}")
        return self.models[key]

    def save(self, directory) -> dict[str, str]:
        os.makedirs(directory, exist_ok=True)
        paths = {}
        for key in sorted(self.models):
            path = os.path.join(directory, f"{key.lower()}.ckpt")
            save_checkpoint(path, self.models[key], {"key": key})
            paths[key] = path
        return paths

    @classmethod
    def load(cls, paths: Mapping[str, str]) -> "SolverModels":
        out = {}
        for key, path in sorted(paths.items()):
            try:
                out[key], _ = load_checkpoint(path)
            except OSError as exc:
                raise ConfigurationError(f"cannot read checkpoint for {key}: {exc}") from exc
        return cls(out)

    @classmethod
    def load_dir(cls, directory) -> "SolverModels":
        if not os.path.isdir(directory):
            raise ConfigurationError(f"checkpoint directory {directory} does not exist")
        paths = {}
        for name in sorted(os.listdir(directory)):
            if name.endswith(".ckpt"):
                paths[name[: -len(".ckpt")].upper()] = os.path.join(directory, name)
        if not paths:
            raise ConfigurationError(f"no checkpoints in {directory}")
        return cls.load(paths)


def _rf_model(category: Category, cfg: SolverConfig) -> SeqModel:
    d = rf_dim(category)
    cls = EncoderDecoder if cfg.ablation == "rf_encoder_decoder" else SequenceRegressor
    return cls(d, cfg.rf_hidden, d)


def _image_model(cfg: SolverConfig) -> SeqModel:
    n = cfg.grid * cfg.grid
    return EncoderDecoder(n, cfg.image_hidden, n)


def _dihedral(vecs: np.ndarray, grid: int) -> list[np.ndarray]:
    """The 8 symmetries of the square applied to (..., grid*grid) vectors."""
    img = vecs.reshape(vecs.shape[:-1] + (grid, grid))
    out = []
    for flip in (False, True):
        base = img[..., ::-1] if flip else img
        for k in range(4):
            out.append(np.rot90(base, k, axes=(-2, -1)).reshape(vecs.shape))
    return out


def rf_examples(category: Category, items: Sequence[tuple[KnowledgeBase, int]]):
    """(X, Y) for a category from (knowledge base, answer index) pairs; unusable items are skipped."""
    xs, ys = [], []
    for kb, answer in items:
        try:
            x = np.stack([encode_rf(category, rf) for rf in kb.question])
            y = encode_rf(category, kb.per_panel[answer - 1])
        except StructuralError:
            continue
        xs.append(x)
        ys.append(y)
    d = rf_dim(category)
    return np.array(xs).reshape(-1, 3, d), np.array(ys).reshape(-1, d)


def image_examples(problems: Sequence[ProblemSpace], cfg: SolverConfig):
    xs, ys = [], []
    for p in problems:
        vecs = np.stack([image_vector(img, cfg.grid) for img in p.panels])
        xs.append(vecs[:3])
        ys.append(vecs[p.answer_index - 1])
    x = np.array(xs).reshape(-1, 3, cfg.grid * cfg.grid)
    y = np.array(ys).reshape(-1, cfg.grid * cfg.grid)
    if cfg.augment_images and len(x):
        x = np.concatenate(_dihedral(x, cfg.grid))
        y = np.concatenate(_dihedral(y, cfg.grid))
    return x, y


def train_models(
    problems: Sequence[ProblemSpace],
    cfg: SolverConfig,
    kbs: Optional[Sequence[KnowledgeBase]] = None,
    seed: int = 0,
) -> SolverModels:
    """Fit one predictor per category using the problems' true categories and answers."""
    if not problems:
        raise ConfigurationError("no training problems")
    if kbs is None:
        kbs = [acquire_knowledge(p, cfg.features) for p in problems]
    cfg = cfg.with_seed(seed)
    models: dict[str, SeqModel] = {}
    if cfg.ablation == "image_only":
        x, y = image_examples(problems, cfg)
        models[IMAGE_KEY] = train(_image_model(cfg).init_params(seed), x, y, cfg.image_train).model
        return SolverModels(models)
    for cat in CATEGORIES:
        if not cat.is_category1:
            continue
        items = [(kb, p.answer_index) for p, kb in zip(problems, kbs) if p.true_category is cat]
        x, y = rf_examples(cat, items)
        if len(x) == 0:
            continue
        models[cat.name] = train(_rf_model(cat, cfg).init_params(seed), x, y, cfg.rf_train).model
    other = [p for p in problems if not p.true_category.is_category1]
    if other:
        x, y = image_examples(other, cfg)
        models[Category.OT.name] = train(_image_model(cfg).init_params(seed), x, y, cfg.image_train).model
    return SolverModels(models)


# --- prediction and solving -----------------------------------------------------------------


def predict_category1(kb: KnowledgeBase, category: Category, models: Optional[SolverModels], cfg: SolverConfig = SolverConfig()) -> Prediction:
    if not category.is_category1:
        raise StructuralError(f"{category} is not a relational-feature category")
    if cfg.predictor == "arithmetic":
        predicted = arithmetic_next(category, kb.question)
    else:
        if models is None:
            raise ConfigurationError("no trained models supplied")
        model = models.get(category.name)
        x = np.stack([encode_rf(category, rf) for rf in kb.question])
        predicted = decode_rf(category, model.predict(x[None])[0], kb.question)
    return match_rf(category, predicted, kb.options)


def predict_category2(panels: Sequence[RasterImage], model: Optional[SeqModel], cfg: SolverConfig = SolverConfig()) -> Prediction:
    if model is None:
        raise ConfigurationError("no image model supplied")
    vecs = np.stack([image_vector(img, cfg.grid) for img in panels])
    predicted = model.predict(vecs[None, :3])[0]
    return match_vector(predicted, list(vecs[3:]))


@dataclass(frozen=True)
class Decision:
    category: Category
    prediction: Prediction
    kb: Optional[KnowledgeBase] = None

    @property
    def answer_index(self) -> int:
        return self.prediction.chosen_option

    @property
    def answer_letter(self) -> str:
        return "ABCD"[self.answer_index - OPTION_INDICES[0]]

    def predicted_knowledge(self) -> str:
        rf = self.prediction.predicted_rf
        if rf is None:
            return "image-vector"
        if self.category is Category.RT:
            return f"rho={rf.rho:.0f}"
        if self.category is Category.CT:
            return f"chi={rf.total_count}"
        return "sigma=" + ",".join(s.display for s in rf.sigma)


def _panels(p) -> tuple[RasterImage, ...]:
    panels = p.panels if isinstance(p, ProblemSpace) else tuple(p)
    if len(panels) != N_PANELS:
        raise StructuralError(f"problem needs {N_PANELS} panels, got {len(panels)}")
    return panels


def solve(panels, models: Optional[SolverModels], cfg: SolverConfig = SolverConfig(), kb: Optional[KnowledgeBase] = None) -> Decision:
    """Solve one problem from its seven panels only.

    A failure while extracting features sends the problem to the image-based
    predictor instead of aborting.
    """
    panels = _panels(panels)
    if kb is None:
        try:
            kb = acquire_knowledge(panels, cfg.features)
        except (DRError, ValueError, ArithmeticError):
            kb = None
    category = classify(kb) if kb is not None else Category.OT
    if cfg.ablation == "image_only":
        model = models.get(IMAGE_KEY) if models is not None else None
        return Decision(category, predict_category2(panels, model, cfg), kb)
    if category.is_category1:
        return Decision(category, predict_category1(kb, category, models, cfg), kb)
    model = models.get(Category.OT.name) if models is not None else None
    return Decision(category, predict_category2(panels, model, cfg), kb)
