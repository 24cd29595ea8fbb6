import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_models, toy_grammar
from dtparse.features import EXT_LEFT, NULL, UNASSIGNED, ConfigError, NodeTable
from dtparse.models import (
    MODEL_NAMES, Context, ModelConfig, ModelSet, Sentence, catalog_groups, node_feature,
)
from dtparse.parser import Expander


def _start(models, words, tags=None):
    s = Sentence.from_surfaces(models.grammar, words, tags)
    ex = Expander(models, s)
    return ex, ex.initial(), s


def test_future_vocabularies(grammar):
    ms = ModelSet(grammar)
    assert ms.n_futures["ext"] == 4  # root is never predicted
    assert ms.n_futures["tag"] == len(grammar.tags)
    assert ms.n_futures["label"] == len(grammar.labels)
    assert "GOD" in grammar.labels


def test_conjunction_catalog_skips_neighbour_conjunctions():
    groups = catalog_groups("conj")
    assert not [g for g in groups if g[0] == "node" and g[1] != "k" and g[1].startswith("k") and g[2] == "conj"]
    assert ("node", "k-1", "conj") in catalog_groups("label")


def test_tags_only_catalog_has_no_words():
    for m in MODEL_NAMES:
        groups = catalog_groups(m, tags_only=True)
        assert not [g for g in groups if g[0] == "w" or (g[0] == "node" and g[2] == "word")]
    with pytest.raises(ConfigError):
        catalog_groups("bogus")


def test_uniform_models(grammar):
    ms = ModelSet.uniform(grammar)
    ex, st0, s = _start(ms, ["dogs", "bark"])
    for m in MODEL_NAMES:
        k = ms.n_futures[m]
        assert ms.dist(m, Context(st0, 0), s.word_ids) == pytest.approx([1 / k] * k)
    vals, lps = ms.score_extension(Context(st0, 0), s)
    assert [math.exp(v) for v in lps] == pytest.approx([0.25] * 4)


def test_strict_tag_dictionary(grammar):
    ms = ModelSet.uniform(grammar)
    _, st0, s = _start(ms, ["the", "dog"])
    vals, lps = ms.score_tag(Context(st0, 0), s)
    assert vals == [grammar.tag_index["AT"]]
    assert lps == [0.0]


def test_known_tags_mode(grammar):
    ms = ModelSet.uniform(grammar, ModelConfig(known_tags=True))
    _, st0, s = _start(ms, ["the", "dog"], ["AT", "NN1"])
    assert ms.score_tag(Context(st0, 1), s) == ([grammar.tag_index["NN1"]], [0.0])


def test_flexible_dictionary_adds_model_tags(grammar, models):
    strict = models
    flex = ModelSet(grammar, ModelConfig(flexible_tags=1), dict(models.trees))
    _, st0, s = _start(strict, ["the", "dog"])
    ctx = Context(st0, 0)
    sv, _ = strict.score_tag(ctx, s)
    fv, flp = flex.score_tag(ctx, s)
    top = int(np.argmax(strict.dist("tag", ctx, s.word_ids)))
    assert set(fv) == set(sv) | {top}
    assert sum(math.exp(v) for v in flp) == pytest.approx(1.0)


def test_unknown_word_gets_full_tag_set(grammar):
    ms = ModelSet.uniform(grammar)
    _, st0, s = _start(ms, ["zebra"])
    assert s.word_ids[0] == ms._unk()
    vals, lps = ms.score_tag(Context(st0, 0), s)
    assert vals == list(range(len(grammar.tags)))
    assert sum(math.exp(v) for v in lps) == pytest.approx(1.0)


def test_active_node_scores(grammar, models):
    _, st0, s = _start(models, ["dogs", "bark"])
    assert models.score_active(Context(st0, 0, (0,)), s) == [0.0]
    uni = ModelSet.uniform(grammar)
    assert [math.exp(v) for v in uni.score_active(Context(st0, 0, (0, 1)), s)] == pytest.approx([0.5, 0.5])
    off = ModelSet(grammar, ModelConfig(use_derivation=False), dict(models.trees))
    assert off.score_active(Context(st0, 0, (0, 1)), s) == [0.0, -math.inf]


def test_fall_through_reads_nearest_child(grammar):
    nt = NodeTable()
    a = nt.make(0, 1, UNASSIGNED, EXT_LEFT, UNASSIGNED, 0, 1)
    b = nt.make(1, 2, UNASSIGNED, EXT_LEFT, UNASSIGNED, 1, 2)
    parent = nt.make(UNASSIGNED, UNASSIGNED, UNASSIGNED, UNASSIGNED, UNASSIGNED, 0, 2, [a, b])
    # a left neighbour answers from its rightmost child, a right neighbour from its leftmost
    assert node_feature(parent, "tag", "right", grammar) == 2
    assert node_feature(parent, "tag", "left", grammar) == 1
    # the current node falls to its head side once labelled
    n_label = grammar.label_index["N"]  # right-to-left
    labelled = nt.replace(parent, label=n_label)
    assert node_feature(labelled, "word", "head", grammar) == 1
    assert node_feature(labelled, "label", "head", grammar) == n_label
    assert node_feature(a, "label", "left", grammar) is None  # childless and unassigned
    assert node_feature(nt.replace(parent, word=NULL), "word", "left", grammar) is None
    assert node_feature(None, "tag", "left", grammar) is None


def test_head_of_picks_rightmost_noun(grammar):
    nt = NodeTable()
    the = nt.make(0, grammar.tag_index["AT"], UNASSIGNED, 0, 0, 0, 1)
    dog = nt.make(1, grammar.tag_index["NN1"], UNASSIGNED, 0, 0, 1, 2)
    assert grammar.head_of(grammar.label_index["N"], [the, dog]) == (1, grammar.tag_index["NN1"])
    assert grammar.head_of(grammar.label_index["V"], [the]) == (NULL, NULL)


def _walk_states(models, words, seed, steps=40):
    """States along a random derivation, with the expander that made them."""
    ex, state, s = _start(models, words)
    rng = np.random.default_rng(seed)
    out = [state]
    for _ in range(steps):
        succ = ex.successors(state)
        if not succ:
            break
        state = succ[int(rng.integers(len(succ)))].state
        out.append(state)
    return ex, out, s


@given(st.integers(0, 10_000), st.lists(st.sampled_from(["the", "dog", "dogs", "bark", "sees", "cat"]),
                                         min_size=1, max_size=4))
@settings(max_examples=40, deadline=None)
def test_scores_are_normalized(seed, words):
    models = random_models(toy_grammar(), seed=seed % 7)
    ex, states, s = _walk_states(models, words, seed)
    for state in states:
        for x, node in enumerate(state.nodes):
            ctx = Context(state, x)
            for m in MODEL_NAMES:
                d = models.dist(m, ctx, s.word_ids)
                assert d.sum() == pytest.approx(1.0) and (d > 0).all()
            feat = node.next_feature()
            if feat is not None and feat != "label":
                _, lps = models.score(feat, ctx, s)
                assert sum(math.exp(v) for v in lps) == pytest.approx(1.0)
        cands = tuple(state.candidates(2))
        if len(cands) == 2:
            lps = models.score_active(Context(state, cands[0], cands), s)
            assert sum(math.exp(v) for v in lps) == pytest.approx(1.0)


def test_answers_are_pure(models):
    ex, states, s = _walk_states(models, ["the", "cat", "sees", "dogs"], 3)
    for state in states:
        for m in MODEL_NAMES:
            cat = models.catalogs[m]
            ctx = Context(state, 0, tuple(state.candidates(2)))
            v1 = cat.vector(ctx, s.word_ids)
            v2 = cat.vector(ctx, s.word_ids)
            lazy = cat.lazy(ctx, s.word_ids)
            assert (v1 == v2).all()
            assert [lazy[q] for q in range(len(cat))] == v1.tolist()


def test_model_set_save_load(models, tmp_path):
    models.save(tmp_path)
    again = ModelSet.load(tmp_path)
    assert again.config == models.config
    assert again.grammar.tags == models.grammar.tags
    assert again.grammar.labels == models.grammar.labels
    _, states, s = _walk_states(models, ["the", "dog", "barks"], 1)
    for state in states:
        for m in MODEL_NAMES:
            ctx = Context(state, 0, tuple(state.candidates(2)))
            assert again.dist(m, ctx, s.word_ids) == pytest.approx(models.dist(m, ctx, s.word_ids), abs=0)
    assert (tmp_path / "tag.questions").read_text().splitlines() == models.catalogs["tag"].names()


def test_missing_manifest(tmp_path):
    with pytest.raises(ConfigError):
        ModelSet.load(tmp_path)


def test_model_config_from_strings():
    c = ModelConfig.from_dict({"dwc": "3", "use_derivation": "false", "known_tags": "1", "junk": "x"})
    assert c.dwc == 3 and not c.use_derivation and c.known_tags
