import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dtparse.evaluate import (
    EXACT_LIMIT, EvaluationError, SentenceResult, binomial_tail, crossing_brackets, exact_match,
    format_report, normal_tail, paired_outcome, precision_recall, report, significance,
    tagging_error_rate,
)
from dtparse.treebank import parse_bracketed


def T(text):
    return parse_bracketed(text)


def _w(words):
    return " ".join(f"{w}_NN1" for w in words)


GOLD = T(f"[X [X {_w('AB')} X] [X {_w('CD')} X] [X {_w('EF')} X] G_NN1 X]")
PRED = T(f"[X [X {_w('ABC')} X] D_NN1 [X {_w('EFG')} X] X]")


def test_crossing_bracket_example():
    assert crossing_brackets(GOLD, PRED, detail=True) == [(0, 3)]
    assert crossing_brackets(GOLD, PRED) == 1
    assert crossing_brackets(GOLD, GOLD) == 0
    # cross-check against span arithmetic on the bare bracketings
    gold_spans = oracles.spans(("X", [("X", ["A", "B"]), ("X", ["C", "D"]), ("X", ["E", "F"]), "G"]))
    pred_spans = oracles.spans(("X", [("X", ["A", "B", "C"]), "D", ("X", ["E", "F", "G"])]))
    assert oracles.crossing_count(gold_spans, pred_spans) == 1


def test_exact_match_variants():
    g = T("[V [N the_AT dog_NN1 N] barks_VVZ V]")
    retag = T("[V [N the_AT dog_NN2 N] barks_VVZ V]")
    relabel = T("[V [J the_AT dog_NN1 J] barks_VVZ V]")
    assert exact_match(g, g) and exact_match(g, g, ignore_tags=True)
    assert not exact_match(g, retag) and exact_match(g, retag, ignore_tags=True)
    assert not exact_match(g, relabel) and not exact_match(g, relabel, ignore_tags=True)
    assert not exact_match(g, None)
    with pytest.raises(EvaluationError):
        exact_match(g, T("[V [N a_AT dog_NN1 N] barks_VVZ V]"))


def test_conjunct_markers_compare_as_flags():
    a = T("[N [N& cats_NN2 N&] and_CC [N+ dogs_NN2 N+] N]")
    b = T("[N [N+ cats_NN2 N+] and_CC [N+ dogs_NN2 N+] N]")
    c = T("[N [N cats_NN2 N] and_CC [N+ dogs_NN2 N+] N]")
    assert exact_match(a, b)
    assert not exact_match(a, c)


def test_precision_recall_examples():
    g = T("[V [N the_AT big_JJ dog_NN1 N] barks_VVZ V]")
    assert precision_recall(g, g) == (1.0, 1.0)
    n = 1  # constituents of g apart from the sentence span
    extra = T("[V [N the_AT [J big_JJ J] dog_NN1 N] barks_VVZ V]")
    assert precision_recall(g, extra) == pytest.approx((n / (n + 1), 1.0))
    missing = T("[V the_AT big_JJ dog_NN1 barks_VVZ V]")
    assert precision_recall(g, missing) == pytest.approx((1.0, (n - 1) / n))
    relabelled = T("[V [J the_AT big_JJ dog_NN1 J] barks_VVZ V]")
    assert precision_recall(g, relabelled) == (1.0, 1.0)
    assert precision_recall(g, relabelled, labeled=True) == (0.0, 0.0)


def test_tagging_error_rate():
    tags = ["AT"] * 10
    assert tagging_error_rate([(tags, tags)]) == 0.0
    assert tagging_error_rate([(tags, ["NN1"] + tags[1:])]) == pytest.approx(0.1)
    assert tagging_error_rate([(tags, ["NN1"] * 10)]) == 1.0
    with pytest.raises(EvaluationError):
        tagging_error_rate([(tags, tags[:3])])


# -- significance --------------------------------------------------------------------

@pytest.mark.parametrize("c12,c21,expected", [(11, 16, 0.22), (23, 30, 0.21)])
def test_significance_table_rows(c12, c21, expected):
    assert significance(c12, c21) == pytest.approx(expected, abs=0.01)


def test_exact_branch_matches_rational_oracle():
    for n in range(1, EXACT_LIMIT + 1):
        for k in range(n + 1):
            assert binomial_tail(k, n) == pytest.approx(float(oracles.binomial_lower_tail(k, n)), rel=1e-12)


def test_balanced_counts_tend_to_one_half():
    # the lower tail includes the observed count, so small balanced samples sit above 1/2
    assert significance(5, 5) == pytest.approx(float(oracles.binomial_lower_tail(5, 10)))
    assert significance(5, 5) > 0.5
    assert significance(400, 400) == pytest.approx(0.5, abs=0.02)
    values = [significance(k, k) for k in (5, 20, 80, 320)]
    assert all(b < a for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("n", range(20, 61))
def test_normal_approximation_band(n):
    for k in range(n + 1):
        assert abs(normal_tail(k, n) - binomial_tail(k, n)) <= 0.02


@given(st.integers(0, 200), st.integers(0, 200))
@settings(max_examples=200, deadline=None)
def test_significance_symmetric_and_bounded(a, b):
    if a == b == 0:
        with pytest.raises(EvaluationError):
            significance(a, b)
        return
    p = significance(a, b)
    assert p == significance(b, a)
    assert 0.0 < p <= 1.0


def test_significance_errors():
    with pytest.raises(EvaluationError):
        significance(-1, 3)


def test_paired_outcome():
    out = paired_outcome([True, True, False, False], [True, False, True, True])
    assert (out.c12, out.c21) == (1, 2)
    with pytest.raises(EvaluationError):
        paired_outcome([True], [])


# -- report ------------------------------------------------------------------------

def test_perfect_system_report():
    golds = [GOLD, T("[V [N the_AT dog_NN1 N] barks_VVZ V]")]
    rep = report([SentenceResult(g, [g], gold_logprob=-1.0) for g in golds])
    for key in ("exact", "exnotag", "extop5", "extop20", "crossing_accuracy", "precision", "recall"):
        assert rep[key] == 1.0
    assert rep["crossings"] == 0 and rep["tag_error"] == 0.0
    assert rep["perplexity"] == pytest.approx(2.0)
    text = format_report(rep)
    assert "EXACT" in text and "exact=1.000000" in text


def test_gold_at_rank_four():
    g = T("[V [N the_AT dog_NN1 N] barks_VVZ V]")
    wrong = [T("[V the_AT [N dog_NN1 N] barks_VVZ V]"), T("[V the_AT dog_NN1 barks_VVZ V]"),
             T("[N [N the_AT dog_NN1 N] barks_VVZ N]")]
    rep = report([SentenceResult(g, wrong + [g])])
    assert rep["exact"] == 0.0 and rep["extop5"] == 1.0 and rep["extop20"] == 1.0


def test_missing_prediction_counts_wrong_everywhere():
    g = T("[V [N the_AT dog_NN1 N] barks_VVZ V]")
    rep = report([SentenceResult(g, []), SentenceResult(g, [g])])
    assert rep["exact"] == 0.5 and rep["extop20"] == 0.5
    assert rep["crossing_accuracy"] == 0.5
    assert rep["tag_error"] == 0.5
    assert rep["recall"] == 0.5
    assert "perplexity" not in rep


def test_long_sentences_left_out_of_short_crossing_accuracy():
    long_gold = T("[V " + " ".join(["x_NN1"] * 30) + " V]")
    long_pred = T("[V [N x_NN1 x_NN1 N] " + " ".join(["x_NN1"] * 28) + " V]")
    crossed = T("[V [N " + " ".join(["x_NN1"] * 2) + " N] [N " + " ".join(["x_NN1"] * 28) + " N] V]")
    crossing_pred = T("[V [N " + " ".join(["x_NN1"] * 3) + " N] " + " ".join(["x_NN1"] * 27) + " V]")
    rep = report([SentenceResult(long_gold, [long_pred]), SentenceResult(crossed, [crossing_pred]),
                  SentenceResult(GOLD, [GOLD])], max_crossing_length=25)
    assert rep["crossing_accuracy"] == pytest.approx(2 / 3)
    assert rep["crossing_accuracy_short"] == 1.0


@st.composite
def bracketings(draw, words, lo=0, hi=None, depth=0):
    hi = len(words) if hi is None else hi
    out, i = [], lo
    while i < hi:
        j = draw(st.integers(i + 1, hi))
        if j - i > 1 and depth < 3 and draw(st.booleans()) and (i, j) != (lo, hi):
            out.append("[X " + draw(bracketings(words, i, j, depth + 1)) + " X]")
        else:
            out.extend(f"{w}_NN1" for w in words[i:j])
        i = j
    return " ".join(out)


WORDS = list("abcdefg")


@given(st.lists(st.tuples(bracketings(WORDS), st.lists(bracketings(WORDS), max_size=25)), min_size=1, max_size=6))
@settings(max_examples=80, deadline=None)
def test_report_invariants(rows):
    results = [SentenceResult(T(f"[S {g} S]"), [T(f"[S {p} S]") for p in preds]) for g, preds in rows]
    rep = report(results)
    assert rep["exact"] <= rep["extop5"] <= rep["extop20"]
    assert rep["exact"] <= rep["exnotag"]
    for r in results:
        if r.best is not None and exact_match(r.gold, r.best):
            assert crossing_brackets(r.gold, r.best) == 0
            assert precision_recall(r.gold, r.best) == (1.0, 1.0)
        assert crossing_brackets(r.gold, r.gold) == 0
