"""Command-line entry point.

Failures print one line ``error[<kind>]: <message>`` on stderr and exit with
2 (usage or configuration), 3 (data) or 4 (training divergence).
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .core import (
    CATEGORIES,
    ConfigurationError,
    CorpusError,
    DRError,
    GenerationError,
    StructuralError,
    TrainingError,
)
from .generator import GeneratorSpec, generate_corpus
from .harness import Corpus, cross_validate, evaluate, load_corpus, save_corpus, train_on
from .raster import read_pgm
from .reasoner import SolverConfig, SolverModels, solve
from .seqnet import gradcheck_suite

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="run seed")
    common.add_argument("--config", help="JSON file with solver configuration")
    common.add_argument("--out", help="output path (file or directory, per command)")
    common.add_argument("--format", choices=("text", "json", "csv"), default="text")

    parser = _Parser(prog="drsolver", description="Diagrammatic reasoning solver")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic corpus")
    for cat in CATEGORIES:
        g.add_argument(f"--{cat.value.lower()}", type=int, default=0, help=f"number of {cat.value} problems")
    g.add_argument("--panel-size", type=int, default=64)
    g.add_argument("--inline", action="store_true", help="embed panels as base64 in the manifest")

    s = sub.add_parser("solve", parents=[common], help="solve one problem")
    s.add_argument("--models", required=True, help="checkpoint directory")
    s.add_argument("--corpus", help="corpus manifest")
    s.add_argument("--problem", help="problem id in the corpus (default: first)")
    s.add_argument("--panels", nargs=7, metavar="PGM", help="seven panel files instead of a corpus")

    t = sub.add_parser("train", parents=[common], help="train predictors; --out is the checkpoint directory")
    t.add_argument("--corpus", required=True)

    e = sub.add_parser("evaluate", parents=[common], help="evaluate checkpoints on a corpus")
    e.add_argument("--corpus", required=True)
    e.add_argument("--models", required=True)

    x = sub.add_parser("xval", parents=[common], help="stratified k-fold cross-validation")
    x.add_argument("--corpus", required=True)
    x.add_argument("--folds", type=int, default=10)

    c = sub.add_parser("gradcheck", parents=[common], help="compare LSTM gradients with finite differences")
    c.add_argument("--configs", type=int, default=10)
    return parser


def load_config(path: Optional[str]) -> SolverConfig:
    if not path:
        return SolverConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a JSON object")
    return SolverConfig.from_dict(data)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_generate(args) -> int:
    counts = {cat: getattr(args, cat.value.lower()) for cat in CATEGORIES}
    if not args.out:
        raise UsageError("generate needs --out <manifest.json>")
    spec = GeneratorSpec(seed=args.seed, counts=counts, panel_size=args.panel_size)
    problems = generate_corpus(spec)
    save_corpus(Corpus(problems, args.seed, args.panel_size, spec.to_dict()), args.out, inline=args.inline)
    summary = ", ".join(f"{c.value}={counts[c]}" for c in CATEGORIES)
    print(f"wrote {len(problems)} problems ({summary}) to {args.out}")
    return EXIT_OK


def _cmd_solve(args, cfg) -> int:
    models = SolverModels.load_dir(args.models)
    if args.panels:
        panels = [read_pgm(p) for p in args.panels]
        pid, truth = "", None
    elif args.corpus:
        corpus = load_corpus(args.corpus)
        if not corpus.problems:
            raise CorpusError("corpus is empty")
        match = [p for p in corpus.problems if args.problem in (None, p.problem_id)]
        if not match:
            raise CorpusError(f"problem {args.problem} not in corpus")
        panels, pid, truth = match[0].panels, match[0].problem_id, match[0]
    else:
        raise UsageError("solve needs --corpus or --panels")
    d = solve(panels, models, cfg)
    rec = {
        "id": pid,
        "detected_category": d.category.value,
        "predicted_answer": d.answer_letter,
        "answer_index": d.answer_index,
        "predicted_knowledge": d.predicted_knowledge(),
        "scores": list(d.prediction.score_per_option),
    }
    if truth is not None:
        rec["correct"] = d.answer_index == truth.answer_index
    if args.format == "json":
        text = json.dumps(rec, sort_keys=True) + "\n"
    elif args.format == "csv":
        keys = sorted(rec)
        text = ",".join(keys) + "\n" + ",".join(str(rec[k]).replace(",", ";") for k in keys) + "\n"
    else:
        text = "".join(f"{k}: {rec[k]}\n" for k in sorted(rec))
    _emit(text, args.out)
    return EXIT_OK


def _cmd_train(args, cfg) -> int:
    if not args.out:
        raise UsageError("train needs --out <checkpoint directory>")
    corpus = load_corpus(args.corpus)
    models = train_on(corpus.problems, cfg, seed=args.seed)
    paths = models.save(args.out)
    print(f"trained {', '.join(sorted(paths))}; checkpoints in {args.out}")
    return EXIT_OK


def _cmd_evaluate(args, cfg) -> int:
    corpus = load_corpus(args.corpus)
    models = SolverModels.load_dir(args.models)
    report = evaluate(corpus.problems, models, cfg)
    _emit(report.render(args.format), args.out)
    return EXIT_OK


def _cmd_xval(args, cfg) -> int:
    corpus = load_corpus(args.corpus)
    report = cross_validate(corpus.problems, args.folds, args.seed, cfg)
    _emit(report.render(args.format), args.out)
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    cases = gradcheck_suite(args.configs, args.seed)
    worst = max(c.max_rel_error for c in cases)
    if args.format == "json":
        text = json.dumps({"max_relative_error": worst, "cases": [c.__dict__ for c in cases]}, sort_keys=True) + "\n"
    elif args.format == "csv":
        text = "model,input_dim,hidden_dim,output_dim,steps,batch,seed,max_rel_error\n" + "".join(
            f"{c.model},{c.input_dim},{c.hidden_dim},{c.output_dim},{c.steps},{c.batch},{c.seed},{c.max_rel_error:.3e}\n"
            for c in cases
        )
    else:
        text = f"max relative gradient error: {worst:.3e} over {len(cases)} configurations\n"
    _emit(text, args.out)
    return EXIT_OK if worst < GRADCHECK_TOLERANCE else EXIT_FAIL


def _fail(kind: str, message: str, code: int) -> int:
    print(f"error[{kind}]: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        cfg = load_config(args.config)
        handler = {
            "solve": _cmd_solve,
            "train": _cmd_train,
            "evaluate": _cmd_evaluate,
            "xval": _cmd_xval,
        }[args.command]
        return handler(args, cfg)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except ConfigurationError as exc:
        return _fail("config", str(exc), EXIT_USAGE)
    except TrainingError as exc:
        return _fail("training", str(exc), EXIT_DIVERGED)
    except (CorpusError, StructuralError, GenerationError, OSError) as exc:
        return _fail("data", str(exc), EXIT_DATA)
    except DRError as exc:
        return _fail("data", str(exc), EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
