"""Command-line entry point: ``dtparse train|parse|tag|evaluate|significance|describe-experiment``.

Exit status is 0 on success, 1 on data errors and 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass

from .bct import BCTError
from .evaluate import (
    EvaluationError, SentenceResult, exact_match, format_report, paired_outcome, report, significance,
)
from .features import ConfigError, TreeHeadTable
from .models import ModelConfig, ModelSet, Sentence
from .parser import DecoderConfig, StackDecoder, parse_probability
from .sdt import TreeError
from .training import TrainConfig, TrainingError, train_pipeline
from .treebank import TreebankError, load_treebank, read_treebank, serialize

logger = logging.getLogger("dtparse")

DATA_ERRORS = (TreebankError, EvaluationError, TrainingError, TreeError, BCTError, OSError)


@dataclass(frozen=True)
class Experiment:
    letter: str
    description: str
    settings: dict


EXPERIMENTS = {
    "A": Experiment("A", "no derivation model; leftmost pending node only",
                    {"no_derivation_model": True}),
    "B": Experiment("B", "no conjunction feature", {"no_conjunction_feature": True}),
    "C": Experiment("C", "prune trees to 1 bit-event of significance", {"prune_bit_events": "1"}),
    "D": Experiment("D", "prune trees to 5 bit-events of significance", {"prune_bit_events": "5"}),
    "E": Experiment("E", "train on the first half of the filtered training data",
                    {"train_fraction": 0.5}),
    "F": Experiment("F", "gold tags given, words known", {"known_tags": True}),
    "G": Experiment("G", "gold tags given, words hidden", {"known_tags": True, "tags_only": True}),
    "H": Experiment("H", "flexible tag dictionary, model's best tag added",
                    {"flexible_tag_dict": "top1"}),
    "I": Experiment("I", "flexible tag dictionary, model's 5 best tags added",
                    {"flexible_tag_dict": "top5"}),
}

FLEXIBLE = {"off": 0, "top1": 1, "top5": 5}
PRUNE = {"off": 0.0, "1": 1.0, "5": 5.0}


# -- config -----------------------------------------------------------------------

def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment line."""
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    with fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def merged_settings(args, keys: dict) -> dict:
    """Defaults < config file < experiment letter < explicit flags."""
    out = dict(keys)
    if getattr(args, "config", None):
        conf = read_config(args.config)
        unknown = sorted(set(conf) - set(keys))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        out.update(conf)
    letter = getattr(args, "experiment", None) or out.get("experiment")
    if letter:
        exp = EXPERIMENTS.get(str(letter).upper())
        if exp is None:
            raise ConfigError(f"unknown experiment {letter!r}")
        out.update(exp.settings)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def model_config(s: dict) -> ModelConfig:
    flex = str(s.get("flexible_tag_dict", "off"))
    if flex not in FLEXIBLE:
        raise ConfigError(f"flexible_tag_dict must be one of {sorted(FLEXIBLE)}")
    known, tags_only = _bool(s.get("known_tags", False)), _bool(s.get("tags_only", False))
    if tags_only and not known:
        raise ConfigError("tags_only requires known_tags")
    return ModelConfig(
        dwc=int(s.get("dwc", 2)),
        use_derivation=not _bool(s.get("no_derivation_model", False)),
        use_conjunction=not _bool(s.get("no_conjunction_feature", False)),
        known_tags=known,
        tags_only=tags_only,
        flexible_tags=FLEXIBLE[flex],
    )


TRAIN_KEYS = {
    "train": None, "heldout": None, "out": None, "head_table": None, "log": None,
    "experiment": None, "dwc": 2, "no_derivation_model": False, "no_conjunction_feature": False,
    "prune_bit_events": "off", "train_fraction": 1.0, "known_tags": False, "tags_only": False,
    "flexible_tag_dict": "off", "prune_depth": 10, "reestimate_iterations": 9,
    "smoothing_iterations": 20, "oov_rate": 0.05, "max_lattice_states": 200_000, "threads": 1,
}


def train_config(s: dict) -> TrainConfig:
    prune = str(s.get("prune_bit_events", "off"))
    if prune not in PRUNE:
        raise ConfigError(f"prune_bit_events must be one of {sorted(PRUNE)}")
    frac = float(s["train_fraction"])
    if not 0.0 < frac <= 1.0:
        raise ConfigError("train_fraction must be in (0, 1]")
    return TrainConfig(
        model=model_config(s),
        prune_depth=int(s["prune_depth"]),
        reestimate_iterations=int(s["reestimate_iterations"]),
        smoothing_iterations=int(s["smoothing_iterations"]),
        prune_bit_events=PRUNE[prune],
        train_fraction=frac,
        max_lattice_states=int(s["max_lattice_states"]),
        oov_rate=float(s["oov_rate"]),
    )


# -- commands -----------------------------------------------------------------------

def cmd_train(args) -> int:
    s = merged_settings(args, TRAIN_KEYS)
    for k in ("train", "out"):
        if not s.get(k):
            raise ConfigError(f"missing required setting {k!r}")
    tht = None
    if s.get("head_table"):
        if not os.path.exists(s["head_table"]):
            raise ConfigError(f"head table not found: {s['head_table']}")
        tht = TreeHeadTable.load(s["head_table"])
    for k in ("train", "heldout"):
        if s.get(k) and not os.path.exists(s[k]):
            raise ConfigError(f"{k} file not found: {s[k]}")
    cfg = train_config(s)
    trees = load_treebank(s["train"])
    held = load_treebank(s["heldout"]) if s.get("heldout") else []
    if tht is not None:
        tht.check_labels({n.label for t in trees for n in t.subtrees()})
    models, log = train_pipeline(trees, held, cfg, tht)
    models.save(s["out"])
    log_path = s.get("log") or os.path.join(s["out"], "training.log")
    with open(log_path, "a", encoding="utf-8") as fh:
        fh.write(log.text())
    print(f"model written to {s['out']}")
    return 0


def _read_sentences(path):
    src = sys.stdin if path in (None, "-") else open(path, encoding="utf-8")
    with src:
        for line in src:
            line = line.strip()
            if line and not line.startswith("#"):
                yield line.split()


def _sentence(models: ModelSet, tokens: list[str]) -> Sentence:
    if models.config.known_tags:
        words, tags = [], []
        for tok in tokens:
            w, sep, t = tok.rpartition("_")
            if not sep or not w or not t:
                raise TreebankError(f"known-tags input needs word_TAG tokens, got {tok!r}")
            words.append(w)
            tags.append(t)
        try:
            return Sentence.from_surfaces(models.grammar, words, tags)
        except ValueError as exc:
            raise TreebankError(str(exc)) from None
    return Sentence.from_surfaces(models.grammar, tokens)


def _load_models(args) -> ModelSet:
    if not os.path.isdir(args.model):
        raise ConfigError(f"model directory not found: {args.model}")
    models = ModelSet.load(args.model)
    if args.flexible_tag_dict is not None:
        models.config.flexible_tags = FLEXIBLE[args.flexible_tag_dict]
    return models


def _decoder(args) -> StackDecoder:
    return StackDecoder(args.models, DecoderConfig(stack_lambda=args.stack_lambda,
                                                   max_stack_size=args.max_stack_size,
                                                   max_expansions=args.max_expansions))


def cmd_parse(args) -> int:
    args.models = models = _load_models(args)
    dec = _decoder(args)
    out = sys.stdout if args.output in (None, "-") else open(args.output, "w", encoding="utf-8")
    with out:
        for i, tokens in enumerate(_read_sentences(args.input), 1):
            res = dec.decode(_sentence(models, tokens), top_k=args.top_k)
            out.write(f"# sentence {i}\n")
            if res.noparse or not res.trees:
                out.write("# NOPARSE\n")
            for tree, lp in res.trees:
                out.write(f"# logprob={lp:.6f}\n{serialize(tree)}\n")
            out.write("\n")
    return 0


def cmd_tag(args) -> int:
    args.models = models = _load_models(args)
    dec = _decoder(args)
    out = sys.stdout if args.output in (None, "-") else open(args.output, "w", encoding="utf-8")
    with out:
        for tokens in _read_sentences(args.input):
            sent = _sentence(models, tokens)
            res = dec.decode(sent, top_k=1)
            if res.trees:
                tags = res.trees[0][0].tags()
            else:
                tags = ["?"] * len(tokens)
            out.write(" ".join(f"{w}_{t}" for w, t in zip(sent.surfaces, tags)) + "\n")
    return 0


def read_predictions(path) -> list[list]:
    """Ranked predictions per sentence from ``parse`` output.  Files without
    ``# sentence`` headers are read as one tree per sentence."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not any(line.startswith("# sentence") for line in lines):
        return [[t] for t in read_treebank(lines)]
    blocks: list[list[str]] = []
    for line in lines:
        if line.startswith("# sentence"):
            blocks.append([])
        elif blocks:
            blocks[-1].append(line)
        elif line.strip() and not line.startswith("#"):
            raise TreebankError(f"{path}: tree before the first sentence header")
    return [list(read_treebank(b)) for b in blocks]


def _results(gold_path, pred_path) -> list[SentenceResult]:
    gold = load_treebank(gold_path)
    preds = read_predictions(pred_path)
    if len(gold) != len(preds):
        raise EvaluationError(f"{len(gold)} gold sentences but {len(preds)} predictions")
    return [SentenceResult(g, p) for g, p in zip(gold, preds)]


def cmd_evaluate(args) -> int:
    results = _results(args.gold, args.pred)
    if args.model:
        models = ModelSet.load(args.model)
        for r in results:
            sent = Sentence.from_tree(models.grammar, r.gold, with_tags=models.config.known_tags)
            p = parse_probability(r.gold, sent, models)
            r.gold_logprob = math.log2(p) if p > 0 else -math.inf
    limit = None if args.max_length <= 0 else args.max_length
    sys.stdout.write(format_report(report(results, limit), limit))
    return 0


def _correctness(path, gold_path=None) -> list[bool]:
    if gold_path:
        return [exact_match(r.gold, r.best) for r in _results(gold_path, path)]
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            s = line.strip()
            if s and not s.startswith("#"):
                try:
                    out.append(_bool(s))
                except ConfigError:
                    raise EvaluationError(f"{path}: expected 1/0 per line, got {s!r}") from None
    return out


def cmd_significance(args) -> int:
    if args.counts:
        try:
            c12, c21 = (int(v) for v in args.counts.split(","))
        except ValueError:
            raise ConfigError("--counts takes C12,C21") from None
    else:
        if not (args.x and args.y):
            raise ConfigError("give two result files or --counts")
        po = paired_outcome(_correctness(args.x, args.gold), _correctness(args.y, args.gold))
        c12, c21 = po.c12, po.c21
    if c12 + c21 == 0:
        print("c12=0 c21=0: no discriminating sentences")
        return 0
    p = significance(c12, c21)
    print(f"{'c12':>6}{'c21':>6}{'significance':>14}")
    print(f"{c12:>6}{c21:>6}{p:>14.4f}")
    return 0


def describe(letter: str) -> str:
    exp = EXPERIMENTS.get(letter.upper())
    if exp is None:
        raise ConfigError(f"unknown experiment {letter!r}")
    flags = " ".join(f"{k} = {v}" for k, v in exp.settings.items())
    return f"{exp.letter}: {exp.description}\n  {flags}\n"


def cmd_describe(args) -> int:
    letters = [args.letter] if args.letter else list(EXPERIMENTS)
    sys.stdout.write("".join(describe(x) for x in letters))
    return 0


# -- argument parsing -----------------------------------------------------------------

def _decode_flags(p):
    p.add_argument("--model", required=True, help="model directory written by train")
    p.add_argument("--input", help="one tokenized sentence per line (default stdin)")
    p.add_argument("--output", help="output file (default stdout)")
    p.add_argument("--stack-lambda", type=float, default=0.01)
    p.add_argument("--max-stack-size", type=int, default=10_000)
    p.add_argument("--max-expansions", type=int, default=200_000)
    p.add_argument("--flexible-tag-dict", choices=sorted(FLEXIBLE))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dtparse", description="Decision-tree parser")
    ap.add_argument("--describe-experiment", metavar="LETTER")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command")

    t = sub.add_parser("train", help="train a model set from a treebank")
    t.add_argument("--config", help="flat key = value settings file")
    t.add_argument("--train")
    t.add_argument("--heldout")
    t.add_argument("--out")
    t.add_argument("--head-table", dest="head_table")
    t.add_argument("--log", help="append the entropy log here (default OUT/training.log)")
    t.add_argument("--experiment", choices=sorted(EXPERIMENTS))
    t.add_argument("--dwc", type=int)
    t.add_argument("--no-derivation-model", action="store_const", const=True)
    t.add_argument("--no-conjunction-feature", action="store_const", const=True)
    t.add_argument("--prune-bit-events", choices=sorted(PRUNE))
    t.add_argument("--train-fraction", type=float)
    t.add_argument("--known-tags", action="store_const", const=True)
    t.add_argument("--tags-only", action="store_const", const=True)
    t.add_argument("--flexible-tag-dict", choices=sorted(FLEXIBLE))
    t.add_argument("--prune-depth", type=int)
    t.add_argument("--reestimate-iterations", type=int)
    t.add_argument("--smoothing-iterations", type=int)
    t.add_argument("--oov-rate", type=float)
    t.add_argument("--max-lattice-states", type=int)
    t.add_argument("--threads", type=int, help="worker cap (training runs single-threaded)")
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("parse", help="parse sentences")
    _decode_flags(p)
    p.add_argument("--top-k", type=int, default=1)
    p.set_defaults(func=cmd_parse)

    g = sub.add_parser("tag", help="tag sentences with the best parse's tags")
    _decode_flags(g)
    g.set_defaults(func=cmd_tag)

    e = sub.add_parser("evaluate", help="score predictions against gold trees")
    e.add_argument("gold")
    e.add_argument("pred")
    e.add_argument("--model", help="also report test perplexity under this model")
    e.add_argument("--max-length", type=int, default=25,
                   help="length filter for the short-sentence crossing column (0 = none)")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("significance", help="paired sign test between two systems")
    s.add_argument("x", nargs="?")
    s.add_argument("y", nargs="?")
    s.add_argument("--gold", help="treat X and Y as parse output scored against this treebank")
    s.add_argument("--counts", help="C12,C21 directly")
    s.set_defaults(func=cmd_significance)

    d = sub.add_parser("describe-experiment", help="print experiment flag settings")
    d.add_argument("letter", nargs="?")
    d.set_defaults(func=cmd_describe)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.describe_experiment:
            sys.stdout.write(describe(args.describe_experiment))
            return 0
        if not args.command:
            ap.print_help()
            return 2
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
