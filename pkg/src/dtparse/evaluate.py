"""Parse-accuracy metrics and the paired sign test."""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from .treebank import ROOT_LABEL, Token, Tree


class EvaluationError(ValueError):
    pass


@dataclass
class SentenceResult:
    gold: Tree
    predicted: list = field(default_factory=list)  # ranked trees, best first
    gold_logprob: float | None = None  # log2 P(gold tree | sentence), if computed

    @property
    def best(self) -> Tree | None:
        return self.predicted[0] if self.predicted else None


@dataclass
class PairedOutcome:
    c12: int
    c21: int


# -- constituents -----------------------------------------------------------

def _check_words(gold: Tree, pred: Tree) -> None:
    if gold.words() != pred.words():
        raise EvaluationError("gold and predicted trees cover different words")


def _constituents(tree: Tree, labeled: bool = False, with_root: bool = False):
    """Span constituents of ``tree`` as a multiset list.

    The artificial root and any node spanning the whole sentence directly
    under it count as the root span and are left out unless ``with_root``.
    """
    n = len(tree.leaves())
    out = []

    def visit(node: Tree, offset: int) -> int:
        pos = offset
        for ch in node.children:
            if isinstance(ch, Token):
                pos += 1
            else:
                pos = visit(ch, pos)
        if node.label != ROOT_LABEL:
            if with_root or (offset, pos) != (0, n):
                out.append((offset, pos, node.label, node.conj) if labeled else (offset, pos))
        return pos

    visit(tree, 0)
    return out


def _structure(node) -> tuple:
    if isinstance(node, Token):
        return ("w", node.surface)
    return (node.label, node.conj, tuple(_structure(c) for c in node.children))


def _structure_tags(node) -> tuple:
    if isinstance(node, Token):
        return ("w", node.surface, node.tag)
    return (node.label, node.conj, tuple(_structure_tags(c) for c in node.children))


def exact_match(gold: Tree, pred: Tree | None, ignore_tags: bool = False) -> bool:
    """Same brackets, labels and (unless ``ignore_tags``) tags.  Conjunct
    markers compare as a flag: first versus later conjunct is not scored."""
    if pred is None:
        return False
    _check_words(gold, pred)
    key = _structure if ignore_tags else _structure_tags
    return key(gold) == key(pred)


def crossing_brackets(gold: Tree, pred: Tree, detail: bool = False):
    """Predicted constituents that overlap a gold constituent without either
    containing the other.  With ``detail`` returns the offending spans."""
    _check_words(gold, pred)
    gold_spans = set(_constituents(gold))
    bad = []
    for a, b in _constituents(pred):
        for c, d in gold_spans:
            if a < c < b < d or c < a < d < b:
                bad.append((a, b))
                break
    return bad if detail else len(bad)


def precision_recall(gold: Tree, pred: Tree, labeled: bool = False) -> tuple[float, float]:
    """Fraction of predicted constituents found in the gold tree, and of gold
    constituents found in the prediction (multiset matching)."""
    _check_words(gold, pred)
    g = _constituents(gold, labeled)
    p = _constituents(pred, labeled)
    remaining: dict = {}
    for s in g:
        remaining[s] = remaining.get(s, 0) + 1
    hit = 0
    for s in p:
        if remaining.get(s, 0) > 0:
            remaining[s] -= 1
            hit += 1
    precision = hit / len(p) if p else 1.0
    recall = hit / len(g) if g else 1.0
    return precision, recall


def tagging_error_rate(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> float:
    """Mismatched tags over total words for ``(gold tags, predicted tags)`` pairs."""
    wrong = total = 0
    for gold, pred in pairs:
        if len(gold) != len(pred):
            raise EvaluationError("tag sequences differ in length")
        total += len(gold)
        wrong += sum(a != b for a, b in zip(gold, pred))
    return wrong / total if total else 0.0


# -- significance -------------------------------------------------------------

EXACT_LIMIT = 30


def binomial_tail(k: int, n: int) -> float:
    """P(Binomial(n, 1/2) <= k), exactly."""
    return sum(math.comb(n, i) for i in range(0, k + 1)) / 2.0 ** n


def normal_tail(k: int, n: int) -> float:
    """Continuity-corrected normal approximation of ``binomial_tail``."""
    z = (k + 0.5 - n / 2.0) / math.sqrt(n / 4.0)
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def significance(c12: int, c21: int) -> float:
    """Probability of a split at least this lopsided between two systems of
    equal accuracy, counting only sentences where they disagree."""
    if c12 < 0 or c21 < 0:
        raise EvaluationError("counts must be non-negative")
    n = c12 + c21
    if n == 0:
        raise EvaluationError("no discriminating sentences")
    k = min(c12, c21)
    return binomial_tail(k, n) if n <= EXACT_LIMIT else normal_tail(k, n)


def paired_outcome(x_correct: Sequence[bool], y_correct: Sequence[bool]) -> PairedOutcome:
    if len(x_correct) != len(y_correct):
        raise EvaluationError("result sets differ in length")
    c12 = sum(1 for a, b in zip(x_correct, y_correct) if a and not b)
    c21 = sum(1 for a, b in zip(x_correct, y_correct) if b and not a)
    return PairedOutcome(c12, c21)


# -- report -------------------------------------------------------------------

def _top_k(r: SentenceResult, k: int) -> bool:
    return any(exact_match(r.gold, p) for p in r.predicted[:k])


def report(results: Sequence[SentenceResult], max_crossing_length: int | None = 25) -> dict:
    """Aggregate metrics over decoded sentences.

    Sentences without a prediction count as wrong everywhere; for the
    bracket metrics they score as a prediction with no constituents and every
    tag wrong.  Crossing-brackets accuracy is the fraction of sentences with
    zero violations, also given for sentences of at most
    ``max_crossing_length`` words.
    """
    n = len(results)
    out: dict = {"sentences": n}
    if n == 0:
        return out
    exact = exnotag = top5 = top20 = 0
    zero_cross = short = short_zero = 0
    crossings = 0
    hit_p = n_p = hit_r = n_r = 0.0
    tag_pairs = []
    logp = []
    for r in results:
        pred = r.best
        if pred is not None:
            _check_words(r.gold, pred)
        exact += exact_match(r.gold, pred)
        exnotag += exact_match(r.gold, pred, ignore_tags=True)
        top5 += _top_k(r, 5)
        top20 += _top_k(r, 20)
        n_words = len(r.gold.leaves())
        g = _constituents(r.gold)
        if pred is not None:
            c = crossing_brackets(r.gold, pred)
            p = _constituents(pred)
            prec, rec = precision_recall(r.gold, pred)
            hit_p += prec * len(p)
            hit_r += rec * len(g)
            n_p += len(p)
            tag_pairs.append((r.gold.tags(), pred.tags()))
        else:
            c = None
            tag_pairs.append((r.gold.tags(), [None] * n_words))
        n_r += len(g)
        if c is not None:
            crossings += c
        ok = c == 0
        zero_cross += ok
        if max_crossing_length is None or n_words <= max_crossing_length:
            short += 1
            short_zero += ok
        if r.gold_logprob is not None:
            logp.append(r.gold_logprob)
    out.update({
        "exact": exact / n,
        "exnotag": exnotag / n,
        "extop5": top5 / n,
        "extop20": top20 / n,
        "crossing_accuracy": zero_cross / n,
        "crossing_accuracy_short": short_zero / short if short else 0.0,
        "crossings": crossings,
        "precision": hit_p / n_p if n_p else 0.0,
        "recall": hit_r / n_r if n_r else 0.0,
        "tag_error": tagging_error_rate(tag_pairs),
    })
    if logp and len(logp) == n:
        out["perplexity"] = 2.0 ** (-sum(logp) / n)
    return out


_ROWS = [
    ("exact", "EXACT"), ("exnotag", "EXNOTAG"), ("extop5", "EXTOP5"), ("extop20", "EXTOP20"),
    ("crossing_accuracy", "zero-crossing sentences"),
    ("crossing_accuracy_short", "zero-crossing (short)"),
    ("precision", "precision"), ("recall", "recall"), ("tag_error", "tag error"),
]


def format_report(rep: dict, max_crossing_length: int | None = 25) -> str:
    """Aligned table followed by a ``key=value`` block."""
    lines = [f"{'metric':<26}{'value':>10}"]
    for key, name in _ROWS:
        if key in rep:
            if key == "crossing_accuracy_short" and max_crossing_length is not None:
                name = f"zero-crossing (<={max_crossing_length} words)"
            lines.append(f"{name:<26}{100.0 * rep[key]:>9.1f}%")
    if "perplexity" in rep:
        lines.append(f"{'test perplexity':<26}{rep['perplexity']:>10.2f}")
    lines.append(f"{'sentences':<26}{rep.get('sentences', 0):>10d}")
    lines.append("# crossing accuracy = fraction of sentences with no crossing brackets")
    lines.append("")
    for k, v in rep.items():
        lines.append(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}")
    return "\n".join(lines) + "\n"
