import io
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtparse.features import TreeHeadTable, tree_heads
from dtparse.treebank import (
    ROOT_LABEL, TagDictionary, Token, Tree, TreebankError, Vocabulary, build_word_vocabulary,
    filter_training, normalize_capitalization, parse_bracketed, read_treebank, serialize,
    write_treebank, load_treebank,
)

SENT = "[N It_PPH1 N] [V indicates_VVZ [Fn that_CST [N the_AT path_NN1 N] [V is_VBZ wrong_JJ V] Fn] V] ._."


def _norm(s):
    return re.sub(r"\s+", " ", s).strip()


def test_round_trip_simple():
    t = parse_bracketed(SENT)
    assert t.label == ROOT_LABEL
    assert t.words() == ["It", "indicates", "that", "the", "path", "is", "wrong", "."]
    assert t.tags()[0] == "PPH1"
    assert serialize(t) == SENT


def test_spans_are_numbered():
    t = parse_bracketed(SENT)
    fn = [s for s in t.subtrees() if s.label == "Fn"][0]
    assert fn.span == (2, 7)
    assert t.span == (0, 8)
    assert [tok.start for tok in t.leaves()] == list(range(8))


def test_conjunction_suffixes():
    t = parse_bracketed("[N [N& cats_NN2 N&] and_CC [N+ dogs_NN2 N+] N]")
    kids = [c for c in t.children[0].children if isinstance(c, Tree)]
    assert [k.label for k in kids] == ["N", "N"]
    assert [k.suffix for k in kids] == ["&", "+"]
    assert all(k.conj for k in kids)
    assert serialize(t) == "[N [N& cats_NN2 N&] and_CC [N+ dogs_NN2 N+] N]"


def test_coindex_markers_survive_round_trip():
    text = "[S [N he_PPHS1 N] @ [V left_VVD V] S]"
    assert _norm(serialize(parse_bracketed(text))) == text
    text2 = "[S @[N he_PPHS1 N] [V left_VVD V] S]"
    t = parse_bracketed("[S @ [N he_PPHS1 N] [V left_VVD V] S]")
    assert serialize(t) == text2


def test_underscore_in_surface_splits_on_last():
    t = parse_bracketed("[N snake_case_NN1 N]")
    assert t.leaves()[0].surface == "snake_case"
    assert t.leaves()[0].tag == "NN1"


@pytest.mark.parametrize("bad,fragment", [
    ("[N dog_NN1 N] ]", "unbalanced"),
    ("[N dog_NN1", "unclosed"),
    ("[N N]", "empty constituent"),
    ("[N dog N]", "malformed leaf"),
    ("[N dog_NN1 V]", "does not match"),
    ("[ dog_NN1 N]", "label"),
])
def test_malformed_input_reports_offset(bad, fragment):
    with pytest.raises(TreebankError) as exc:
        parse_bracketed(bad)
    assert fragment in str(exc.value)
    assert exc.value.offset is not None


def test_error_offset_is_bytes():
    with pytest.raises(TreebankError) as exc:
        parse_bracketed("[N café_NN1 N] ]")
    assert exc.value.offset == len("[N café_NN1 N] ".encode("utf-8"))


def test_read_treebank_multiline_and_comments(tmp_path):
    text = "# comment\n[S [N a_AT\n dog_NN1 N]\n [V barks_VVZ V] S]\n\n[N cats_NN2 N]\n"
    trees = list(read_treebank(io.StringIO(text)))
    assert len(trees) == 2
    assert trees[0].words() == ["a", "dog", "barks"]
    p = tmp_path / "tb.txt"
    write_treebank(p, trees)
    again = load_treebank(p)
    assert [serialize(t) for t in again] == [serialize(t) for t in trees]


def test_read_treebank_unbalanced_at_end():
    with pytest.raises(TreebankError):
        list(read_treebank(["[S [N a_AT N]"]))


def test_filter_training():
    short = parse_bracketed("[N a_AT dog_NN1 N]")
    ok = parse_bracketed("[V [N a_AT dog_NN1 N] barks_VVZ V]")
    wide = parse_bracketed("[N " + " ".join(f"w{i}_NN1" for i in range(9)) + " N]")
    assert filter_training([short, ok, wide]) == [ok]
    assert filter_training([wide], max_children=9) == [wide]


def test_capitalization():
    assert normalize_capitalization("The", True) == "the"
    assert normalize_capitalization("The", False) == "The"
    assert normalize_capitalization("IBM", True) == "IBM"
    assert normalize_capitalization("McCain", True) == "McCain"


def test_vocabulary_unknown():
    v = Vocabulary(["a", "b"], unknown="<unk>")
    assert v.id("<unk>") == 0
    assert v.id("zzz") == 0
    assert v.map("zzz") == "<unk>"
    with pytest.raises(KeyError):
        Vocabulary(["a"]).id("b")


def test_word_vocabulary_hits_target_rate():
    trees = [parse_bracketed("[N " + " ".join(f"{w}_NN1" for w in words) + " N]")
             for words in (["a"] * 10 + ["b"] * 5 + ["c"] * 3 + ["d"] * 2,)]
    v = build_word_vocabulary(trees, 0.10)
    # dropping only "d" leaves 2/20 = 10% out of vocabulary
    assert set(v.items) == {"<unk>", "a", "b", "c"}
    assert set(build_word_vocabulary(trees, 0.0).items) == {"<unk>", "a", "b", "c", "d"}


def test_tag_dictionary_round_trip():
    trees = [parse_bracketed("[V [N dogs_NN2 N] run_VV0 V]"),
             parse_bracketed("[V [N the_AT run_NN1 N] ended_VVD V]")]
    td = TagDictionary.from_trees(trees)
    assert td.tags_for("run") == {"VV0", "NN1"}
    again = TagDictionary.loads(td.dumps())
    assert again.allowed == td.allowed
    with pytest.raises(TreebankError):
        TagDictionary.loads("no-tab-here\n")


def test_head_table_example():
    t = parse_bracketed("[S [N I_PN N] [V really_RR [V like_VBZ [N ice_NN cream_NN N] V] V] S]")
    heads = tree_heads(t, TreeHeadTable.default())
    s = t.children[0]
    n1, v_outer = s.children
    v_inner = v_outer.children[1]
    n2 = v_inner.children[1]
    words = [heads[id(x)][0] for x in (n1, n2, v_inner, v_outer, s)]
    assert words == ["I", "cream", "like", "like", "like"]


# -- property: random trees round-trip -------------------------------------------

LABELS = ["N", "V", "S", "Fa", "J"]


@st.composite
def trees(draw, depth=0):
    n = draw(st.integers(1, 3))
    kids = []
    for _ in range(n):
        if depth < 3 and draw(st.booleans()):
            kids.append(draw(trees(depth + 1)))
        else:
            w = draw(st.sampled_from(["dog", "cat", "the", "ran", "x_y"]))
            t = draw(st.sampled_from(["NN1", "AT", "VVD"]))
            kids.append(Token(w, t))
    label = draw(st.sampled_from(LABELS))
    suffix = draw(st.sampled_from(["", "", "&", "+"]))
    return Tree(label, kids, suffix=suffix)


@given(trees())
@settings(max_examples=150, deadline=None)
def test_serialize_parse_round_trip(tree):
    text = serialize(tree)
    again = parse_bracketed(text)
    assert serialize(again) == text
    spaced = text.replace(" ", "   ")
    assert serialize(parse_bracketed(spaced)) == text
