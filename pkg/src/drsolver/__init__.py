"""Solver for 4x1 diagrammatic reasoning puzzles.

Panels are read into relational features (rotation, shape counts, relative
size), a rule cascade picks the problem category, and a small LSTM per
category predicts the missing panel before the closest option is chosen.
"""

from .core import (
    Category,
    KnowledgeBase,
    Prediction,
    Primitive,
    ProblemSpace,
    RasterImage,
    RelationalFeatures,
    Scene,
    ShapeKind,
    SizeLabel,
)
from .features import FeatureConfig, acquire_knowledge
from .generator import GeneratorSpec, generate_corpus, generate_problem
from .harness import Corpus, cross_validate, evaluate, load_corpus, save_corpus, split
from .reasoner import SolverConfig, SolverModels, classify, solve, train_models

__version__ = "0.1.0"

__all__ = [
    "Category",
    "Corpus",
    "FeatureConfig",
    "GeneratorSpec",
    "KnowledgeBase",
    "Prediction",
    "Primitive",
    "ProblemSpace",
    "RasterImage",
    "RelationalFeatures",
    "Scene",
    "ShapeKind",
    "SizeLabel",
    "SolverConfig",
    "SolverModels",
    "acquire_knowledge",
    "classify",
    "cross_validate",
    "evaluate",
    "generate_corpus",
    "generate_problem",
    "load_corpus",
    "save_corpus",
    "solve",
    "split",
    "train_models",
]
