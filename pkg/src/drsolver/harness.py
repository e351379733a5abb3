"""Corpus persistence, train/test splits, cross-validation and evaluation reports."""

from __future__ import annotations

import base64
import csv
import io
import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import (
    CATEGORIES,
    Category,
    ConfigurationError,
    CorpusError,
    DRError,
    KnowledgeBase,
    ProblemSpace,
    Scene,
)
from .features import acquire_knowledge
from .perception import detect_shapes, expected_kind, match_detections
from .raster import decode_pgm, encode_pgm
from .reasoner import SolverConfig, SolverModels, solve, train_models

FORMAT_VERSION = 1


# --- corpus manifest ---------------------------------------------------------------


@dataclass
class Corpus:
    problems: list[ProblemSpace]
    seed: Optional[int] = None
    panel_size: Optional[int] = None
    generator: Optional[dict] = None

    def category_counts(self) -> dict[str, int]:
        counts = {c.value: 0 for c in CATEGORIES}
        for p in self.problems:
            if p.true_category is not None:
                counts[p.true_category.value] += 1
        return counts

    def __len__(self) -> int:
        return len(self.problems)


def _panel_dir(manifest_path: str) -> str:
    stem = os.path.splitext(os.path.basename(manifest_path))[0]
    return stem + "_panels"


def save_corpus(corpus: Corpus, path: str, inline: bool = False) -> None:
    """Write a JSON manifest; panels go to a sidecar directory of PGM files or inline as base64."""
    folder = _panel_dir(path)
    root = os.path.dirname(os.path.abspath(path))
    if not inline:
        os.makedirs(os.path.join(root, folder), exist_ok=True)
    records = []
    for p in corpus.problems:
        panels = []
        for k, img in enumerate(p.panels, start=1):
            data = encode_pgm(img)
            if inline:
                panels.append({"pgm_base64": base64.b64encode(data).decode("ascii")})
            else:
                rel = f"{folder}/{p.problem_id}_{k}.pgm"
                with open(os.path.join(root, rel), "wb") as fh:
                    fh.write(data)
                panels.append({"file": rel})
        records.append(
            {
                "id": p.problem_id,
                "answer_index": p.answer_index,
                "true_category": p.true_category.value if p.true_category else None,
                "panels": panels,
                "scenes": [s.to_dict() for s in p.scenes] if p.scenes is not None else None,
            }
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "problem_count": len(records),
        "category_counts": corpus.category_counts(),
        "seed": corpus.seed,
        "panel_size": corpus.panel_size,
        "generator": corpus.generator,
        "problems": records,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_panel(entry: Mapping, root: str, pid: str, k: int):
    if "pgm_base64" in entry:
        try:
            data = base64.b64decode(entry["pgm_base64"], validate=True)
        except ValueError as exc:
            raise CorpusError(f"problem {pid}: panel {k} has invalid base64") from exc
    elif "file" in entry:
        full = os.path.join(root, entry["file"])
        try:
            with open(full, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise CorpusError(f"problem {pid}: panel {k} file {entry['file']} cannot be read") from exc
    else:
        raise CorpusError(f"problem {pid}: panel {k} has neither file nor pgm_base64")
    try:
        return decode_pgm(data)
    except DRError as exc:
        raise CorpusError(f"problem {pid}: panel {k} is not a valid PGM ({exc})") from exc


def load_corpus(path: str) -> Corpus:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise CorpusError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorpusError(f"manifest {path} is not valid JSON: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CorpusError(f"unsupported manifest format_version {manifest.get('format_version')!r}")
    records = manifest.get("problems")
    if not isinstance(records, list):
        raise CorpusError("manifest has no problem list")
    if manifest.get("problem_count") != len(records):
        raise CorpusError(
            f"problem_count {manifest.get('problem_count')} does not match {len(records)} records"
        )
    root = os.path.dirname(os.path.abspath(path))
    problems = []
    for i, rec in enumerate(records):
        pid = rec.get("id", f"#{i}")
        try:
            panels = [_load_panel(e, root, pid, k) for k, e in enumerate(rec["panels"], start=1)]
            scenes = rec.get("scenes")
            cat = rec.get("true_category")
            problems.append(
                ProblemSpace(
                    panels=tuple(panels),
                    answer_index=int(rec["answer_index"]),
                    scenes=tuple(Scene.from_dict(s) for s in scenes) if scenes is not None else None,
                    true_category=Category(cat) if cat is not None else None,
                    problem_id=pid,
                )
            )
        except CorpusError:
            raise
        except (KeyError, TypeError, ValueError, DRError) as exc:
            raise CorpusError(f"problem {pid}: invalid record ({exc})") from exc
    corpus = Corpus(problems, manifest.get("seed"), manifest.get("panel_size"), manifest.get("generator"))
    declared = manifest.get("category_counts")
    if declared is not None and declared != corpus.category_counts():
        raise CorpusError(f"category_counts {declared} do not match the records {corpus.category_counts()}")
    return corpus


# --- splits -------------------------------------------------------------------------


def _by_category(problems: Sequence[ProblemSpace]) -> dict:
    groups: dict = {}
    for i, p in enumerate(problems):
        groups.setdefault(p.true_category, []).append(i)
    return groups


def _group_order(groups: Mapping) -> list:
    order = [c for c in CATEGORIES if c in groups]
    if None in groups:
        order.append(None)
    return order


def split(problems: Sequence[ProblemSpace], train_fraction: float = 0.7, seed: int = 0):
    """Stratified (train, test) partition, deterministic for a seed."""
    if not problems:
        raise ConfigurationError("cannot split an empty corpus")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    groups = _by_category(problems)
    if any(len(v) < 2 for v in groups.values()):
        warnings.warn("a category has fewer than 2 problems; using an unstratified split")
        order = rng.permutation(len(problems))
        n = int(round(train_fraction * len(problems)))
        train_idx, test_idx = sorted(order[:n].tolist()), sorted(order[n:].tolist())
    else:
        train_idx, test_idx = [], []
        for cat in _group_order(groups):
            idx = np.array(groups[cat])[rng.permutation(len(groups[cat]))]
            n = int(round(train_fraction * len(idx)))
            train_idx += idx[:n].tolist()
            test_idx += idx[n:].tolist()
        train_idx.sort()
        test_idx.sort()
    return [problems[i] for i in train_idx], [problems[i] for i in test_idx]


def stratified_folds(problems: Sequence[ProblemSpace], folds: int = 10, seed: int = 0) -> list[list[int]]:
    """Disjoint test index lists covering the corpus, balanced per category."""
    if folds < 2:
        raise ConfigurationError("need at least 2 folds")
    if len(problems) < folds:
        raise ConfigurationError(f"{len(problems)} problems cannot fill {folds} folds")
    rng = np.random.default_rng(seed)
    groups = _by_category(problems)
    dealt = []
    for cat in _group_order(groups):
        idx = np.array(groups[cat])
        dealt += idx[rng.permutation(len(idx))].tolist()
    out: list[list[int]] = [[] for _ in range(folds)]
    for pos, i in enumerate(dealt):
        out[pos % folds].append(i)
    return [sorted(f) for f in out]


# --- reports ------------------------------------------------------------------------


@dataclass
class EvalReport:
    confusion: list[list[int]]  # rows: true category, columns: detected category
    per_category: dict[str, dict]
    mean_accuracy: float
    records: list[dict] = field(default_factory=list)
    detector_accuracy: Optional[float] = None
    folds: list[dict] = field(default_factory=list)
    fold_mean_accuracy: Optional[float] = None
    config: dict = field(default_factory=dict)

    @property
    def classifier_accuracy(self) -> float:
        total = sum(sum(r) for r in self.confusion)
        return sum(self.confusion[i][i] for i in range(len(CATEGORIES))) / total if total else 0.0

    def to_dict(self) -> dict:
        return {
            "categories": [c.value for c in CATEGORIES],
            "confusion": self.confusion,
            "classifier_accuracy": self.classifier_accuracy,
            "per_category": self.per_category,
            "mean_accuracy": self.mean_accuracy,
            "fold_mean_accuracy": self.fold_mean_accuracy,
            "detector_accuracy": self.detector_accuracy,
            "folds": self.folds,
            "config": self.config,
            "records": self.records,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "accuracy", "count"])
        for c in CATEGORIES:
            row = self.per_category[c.value]
            w.writerow([c.value, f"{row['accuracy']:.4f}", row["count"]])
        w.writerow(["Average", f"{self.mean_accuracy:.4f}", sum(r["count"] for r in self.per_category.values())])
        w.writerow([])
        w.writerow(["confusion"] + [c.value for c in CATEGORIES])
        for c, row in zip(CATEGORIES, self.confusion):
            w.writerow([c.value] + row)
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'category':<10}{'accuracy':>10}{'count':>8}"]
        for c in CATEGORIES:
            row = self.per_category[c.value]
            lines.append(f"{c.value:<10}{row['accuracy']:>10.4f}{row['count']:>8}")
        total = sum(r["count"] for r in self.per_category.values())
        lines.append(f"{'Average':<10}{self.mean_accuracy:>10.4f}{total:>8}")
        lines.append("")
        lines.append("classifier confusion (rows = true, columns = detected)")
        lines.append(" " * 6 + "".join(f"{c.value:>6}" for c in CATEGORIES))
        for c, row in zip(CATEGORIES, self.confusion):
            lines.append(f"{c.value:<6}" + "".join(f"{v:>6}" for v in row))
        lines.append(f"classifier accuracy: {self.classifier_accuracy:.4f}")
        if self.detector_accuracy is not None:
            lines.append(f"detector accuracy: {self.detector_accuracy:.4f}")
        if self.folds:
            lines.append("")
            lines.append("folds:")
            for f in self.folds:
                lines.append(f"  fold {f['fold']}: accuracy {f['accuracy']:.4f} on {f['count']} problems")
            lines.append(f"mean of fold accuracies: {self.fold_mean_accuracy:.4f}")
        return "\n".join(lines) + "\n"

    def render(self, fmt: str) -> str:
        if fmt == "json":
            return self.to_json()
        if fmt == "csv":
            return self.to_csv()
        if fmt == "text":
            return self.to_text()
        raise ConfigurationError(f"unknown report format {fmt!r}")


def report_from_records(records: Sequence[dict], **extra) -> EvalReport:
    names = [c.value for c in CATEGORIES]
    confusion = [[0] * len(names) for _ in names]
    per = {n: {"correct": 0, "count": 0, "accuracy": 0.0} for n in names}
    for r in records:
        if r["true_category"] is None:
            continue
        confusion[names.index(r["true_category"])][names.index(r["detected_category"])] += 1
        row = per[r["true_category"]]
        row["count"] += 1
        row["correct"] += int(r["correct"])
    for row in per.values():
        row["accuracy"] = row["correct"] / row["count"] if row["count"] else 0.0
    n = len(records)
    mean = sum(int(r["correct"]) for r in records) / n if n else 0.0
    return EvalReport(confusion=confusion, per_category=per, mean_accuracy=mean, records=list(records), **extra)


def detector_accuracy(problems: Sequence[ProblemSpace]) -> Optional[float]:
    """Fraction of ground-truth primitives found with the right kind and fill."""
    hits = total = 0
    for p in problems:
        if p.scenes is None:
            continue
        for img, scene in zip(p.panels, p.scenes):
            shapes = detect_shapes(img)
            idx = match_detections(scene.primitives, shapes, img.width, img.height)
            for prim, j in zip(scene.primitives, idx):
                total += 1
                if j >= 0 and shapes[j].kind is expected_kind(prim) and shapes[j].filled == prim.filled:
                    hits += 1
    return hits / total if total else None


class KnowledgeCache:
    """Knowledge bases by problem id, computed once from panels only."""

    def __init__(self, cfg: SolverConfig):
        self.cfg = cfg
        self._kbs: dict[str, Optional[KnowledgeBase]] = {}

    def get(self, p: ProblemSpace) -> Optional[KnowledgeBase]:
        key = p.problem_id
        if key not in self._kbs:
            try:
                self._kbs[key] = acquire_knowledge(p.panels, self.cfg.features)
            except (DRError, ValueError, ArithmeticError):
                self._kbs[key] = None
        return self._kbs[key]


def _train(problems, cfg, cache: KnowledgeCache, seed: int) -> SolverModels:
    usable = [(p, cache.get(p)) for p in problems]
    usable = [(p, kb) for p, kb in usable if kb is not None]
    return train_models([p for p, _ in usable], cfg, [kb for _, kb in usable], seed=seed)


def solve_records(problems, models, cfg, cache: Optional[KnowledgeCache] = None) -> list[dict]:
    cache = cache or KnowledgeCache(cfg)
    out = []
    for p in problems:
        d = solve(p.panels, models, cfg, kb=cache.get(p))
        # Correctness is looked up only after solve has returned.
        out.append(
            {
                "id": p.problem_id,
                "true_category": p.true_category.value if p.true_category else None,
                "detected_category": d.category.value,
                "predicted_answer": d.answer_letter,
                "predicted_knowledge": d.predicted_knowledge(),
                "correct": d.answer_index == p.answer_index,
            }
        )
    return out


def evaluate(
    problems: Sequence[ProblemSpace],
    models: SolverModels,
    cfg: SolverConfig = SolverConfig(),
    cache: Optional[KnowledgeCache] = None,
    with_detector: bool = True,
) -> EvalReport:
    records = solve_records(problems, models, cfg, cache)
    return report_from_records(
        records,
        detector_accuracy=detector_accuracy(problems) if with_detector else None,
        config=cfg.to_dict(),
    )


def train_on(problems, cfg: SolverConfig = SolverConfig(), seed: int = 0, cache: Optional[KnowledgeCache] = None) -> SolverModels:
    return _train(problems, cfg, cache or KnowledgeCache(cfg), seed)


def cross_validate(
    problems: Sequence[ProblemSpace],
    folds: int = 10,
    seed: int = 0,
    cfg: SolverConfig = SolverConfig(),
    with_detector: bool = True,
) -> EvalReport:
    """Stratified k-fold: train on k-1 folds, test on the held-out one, pool the records."""
    problems = list(problems)
    test_sets = stratified_folds(problems, folds, seed)
    cache = KnowledgeCache(cfg)
    records: list[dict] = []
    fold_rows = []
    for k, test_idx in enumerate(test_sets):
        held = set(test_idx)
        train_set = [p for i, p in enumerate(problems) if i not in held]
        test_set = [problems[i] for i in test_idx]
        if not any(p.true_category is not None for p in train_set):
            raise ConfigurationError(f"fold {k} has no labelled training problems")
        models = _train(train_set, cfg, cache, seed)
        rec = solve_records(test_set, models, cfg, cache)
        acc = sum(int(r["correct"]) for r in rec) / len(rec)
        fold_rows.append({"fold": k, "accuracy": acc, "count": len(rec)})
        records += [dict(r, fold=k) for r in rec]
    report = report_from_records(
        records,
        detector_accuracy=detector_accuracy(problems) if with_detector else None,
        folds=fold_rows,
        fold_mean_accuracy=float(np.mean([f["accuracy"] for f in fold_rows])),
        config=dict(cfg.to_dict(), folds=folds, seed=seed),
    )
    return report
