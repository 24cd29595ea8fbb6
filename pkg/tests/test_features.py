import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtparse import bct
from dtparse.features import (
    EXT_LEFT, EXT_RIGHT, EXT_UNARY, EXT_UP, EXT, LABEL, CONJ, TAG, UNASSIGNED, ConfigError,
    NodeTable, State, TreeHeadTable, count_item, detect_constituent, numchildren_item,
    tree_extensions, tree_unary_depth,
)
from dtparse.treebank import parse_bracketed


@pytest.mark.parametrize("exts,x,expected", [
    ([EXT_LEFT, EXT_UP, EXT_RIGHT], 2, (0, 2)),
    ([EXT_LEFT, EXT_UP, EXT_RIGHT], 0, (0, 2)),
    ([EXT_LEFT, EXT_UP, EXT_RIGHT], 1, (0, 2)),
    ([EXT_UNARY], 0, (0, 0)),
    ([EXT_LEFT, EXT_UP], 1, None),
    ([EXT_LEFT, None, EXT_RIGHT], 2, None),
    ([EXT_RIGHT, EXT_LEFT, EXT_RIGHT], 2, (1, 2)),
    ([EXT_LEFT, EXT_LEFT, EXT_RIGHT], 2, (1, 2)),
    ([None], 0, None),
])
def test_detect_constituent(exts, x, expected):
    assert detect_constituent(exts, x) == expected


@given(st.lists(st.sampled_from([EXT_LEFT, EXT_RIGHT, EXT_UP, EXT_UNARY, None]), min_size=1, max_size=10),
       st.data())
@settings(max_examples=300, deadline=None)
def test_detected_runs_are_well_formed(exts, data):
    x = data.draw(st.integers(0, len(exts) - 1))
    run = detect_constituent(exts, x)
    if run is None:
        return
    a, b = run
    assert a <= x <= b
    if a == b:
        assert exts[a] == EXT_UNARY
    else:
        assert exts[a] == EXT_LEFT and exts[b] == EXT_RIGHT
        assert all(e == EXT_UP for e in exts[a + 1:b])


def test_tree_extensions_of_a_brown_cow():
    t = parse_bracketed("[N a_AT brown_JJ cow_NN1 N]")
    ext = tree_extensions(t)
    node = t.children[0]
    assert ext[id(t)] == "root"
    assert ext[id(node)] == "unary"
    assert [ext[id(c)] for c in node.children] == ["left", "up", "right"]


def test_unary_depth():
    assert tree_unary_depth(parse_bracketed("[S [N [J old_JJ J] N] S]")) == 4
    assert tree_unary_depth(parse_bracketed("[V a_AT b_NN1 V]")) == 1


def test_head_index_examples():
    tht = TreeHeadTable.default()
    assert tht.head_index("N", ["PN"]) == 0
    assert tht.head_index("N", ["NN", "NN"]) == 1
    assert tht.head_index("S", ["N", "V"]) == 1
    assert tht.head_index("P", ["XX"]) is None
    with pytest.raises(ConfigError):
        tht.head_index("QQ", ["NN"])


def test_head_direction_breaks_ties():
    tht = TreeHeadTable.loads("A\tleft-to-right\tx y\nB\tright-to-left\tx y\n")
    assert tht.head_index("A", ["x", "y", "x"]) == 0
    assert tht.head_index("B", ["x", "y", "x"]) == 2
    # priority beats position
    assert tht.head_index("A", ["y", "x"]) == 1


def test_head_table_round_trip_and_errors():
    tht = TreeHeadTable.default()
    again = TreeHeadTable.loads(tht.dumps())
    assert again.dumps() == tht.dumps()
    with pytest.raises(ConfigError):
        TreeHeadTable.loads("A\tsideways\tx\n")
    with pytest.raises(ConfigError):
        TreeHeadTable.loads("A left-to-right x\n")
    with pytest.raises(ConfigError):
        tht.check_labels(["N", "Zzz"])


def _leaf(nt, i, tag=UNASSIGNED, ext=UNASSIGNED):
    return nt.make(i, tag, UNASSIGNED, ext, UNASSIGNED, i, i + 1)


def test_feature_order_for_leaves_and_internal_nodes():
    nt = NodeTable()
    leaf = _leaf(nt, 0)
    assert leaf.next_feature() == TAG
    leaf = nt.replace(leaf, tag=3)
    assert leaf.next_feature() == EXT
    leaf = nt.replace(leaf, ext=EXT_UNARY)
    assert leaf.complete
    node = nt.make(UNASSIGNED, UNASSIGNED, UNASSIGNED, UNASSIGNED, UNASSIGNED, 0, 1, [leaf])
    assert node.next_feature() == LABEL
    node = nt.replace(node, label=0)
    assert node.next_feature() == CONJ
    node = nt.replace(node, conj=0)
    assert node.next_feature() == EXT


def test_node_table_shares_equal_nodes():
    nt = NodeTable()
    a = _leaf(nt, 0, tag=1)
    b = _leaf(nt, 0, tag=1)
    c = _leaf(nt, 0, tag=2)
    assert a is b and a is not c
    assert len(nt) == 2


def test_candidates_and_active_counts():
    nt = NodeTable()
    done = _leaf(nt, 0, tag=1, ext=EXT_LEFT)
    nodes = (done, _leaf(nt, 1), _leaf(nt, 2, tag=0), _leaf(nt, 3))
    s = State(nodes, (1, UNASSIGNED, 0, UNASSIGNED), (2, 0, 1, 0))
    assert s.candidates(2) == [1, 2]
    assert s.candidates(1) == [1]
    assert s.candidates(10) == [1, 2, 3]
    assert s.active_counts() == [0, 0, 1, 2]
    assert s.depth == 3
    assert s.stack_index == (2, 0, 1)


def test_count_vocabularies():
    assert numchildren_item(3) == "3"
    assert numchildren_item(9) == ">5"
    assert bct.shipped_table("numchildren").encode(numchildren_item(3)) == "10111"
    assert [count_item(n) for n in (1, 5, 6, 10, 11, 20, 21)] == ["1", "5", "6-10", "6-10", "11-20", "11-20", ">20"]
