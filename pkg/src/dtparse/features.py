"""Parse nodes, parse states, head assignment and the question window.

A parse node carries five feature slots (word, tag, label, extension,
conjunction) plus its children.  Nodes are immutable and hash-consed through
a ``NodeTable`` so two states with the same partial trees share node objects
and compare by a tuple of small integers.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from importlib import resources

from .treebank import ROOT_LABEL, Token, Tree

UNASSIGNED = -1
NULL = -2  # assigned, but no value (a head that matched no child)

EXT_LEFT, EXT_RIGHT, EXT_UP, EXT_UNARY, EXT_ROOT = range(5)
EXTENSIONS = ("left", "right", "up", "unary")
EXT_NAMES = EXTENSIONS + ("root",)

TAG, EXT, LABEL, CONJ = "tag", "ext", "label", "conj"

LEFT_TO_RIGHT = "left-to-right"
RIGHT_TO_LEFT = "right-to-left"


class ConfigError(ValueError):
    pass


# -- nodes --------------------------------------------------------------------

class PNode:
    __slots__ = ("word", "tag", "label", "ext", "conj", "start", "end", "children", "uid")

    def __init__(self, word, tag, label, ext, conj, start, end, children, uid):
        self.word = word
        self.tag = tag
        self.label = label
        self.ext = ext
        self.conj = conj
        self.start = start
        self.end = end
        self.children = children
        self.uid = uid

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def span(self) -> int:
        return self.end - self.start

    def next_feature(self):
        """The next feature to assign, or ``None`` when the node is complete."""
        if not self.children:
            if self.tag == UNASSIGNED:
                return TAG
            if self.ext == UNASSIGNED:
                return EXT
            return None
        if self.label == UNASSIGNED:
            return LABEL
        if self.conj == UNASSIGNED:
            return CONJ
        if self.ext == UNASSIGNED:
            return EXT
        return None

    @property
    def complete(self) -> bool:
        return self.next_feature() is None

    def __repr__(self):
        kind = "leaf" if self.is_leaf else f"node/{len(self.children)}"
        return (f"PNode({kind} {self.start}:{self.end} w={self.word} t={self.tag} "
                f"l={self.label} e={self.ext} c={self.conj})")


class NodeTable:
    """Hash-consing factory: equal nodes are the same object."""

    def __init__(self):
        self._table: dict = {}

    def make(self, word, tag, label, ext, conj, start, end, children=()) -> PNode:
        key = (word, tag, label, ext, conj, start, end, tuple(c.uid for c in children))
        node = self._table.get(key)
        if node is None:
            node = PNode(word, tag, label, ext, conj, start, end, tuple(children), len(self._table))
            self._table[key] = node
        return node

    def replace(self, node: PNode, **changes) -> PNode:
        fields = {s: getattr(node, s) for s in ("word", "tag", "label", "ext", "conj", "start", "end", "children")}
        fields.update(changes)
        return self.make(**fields)

    def __len__(self):
        return len(self._table)


class State:
    """An ordered array of partial trees spanning the sentence.

    ``counts`` is ``(tags, labels, extensions, conjunctions)`` decided so far;
    the first three form the public stack index.
    """

    __slots__ = ("nodes", "tags", "counts", "key")

    def __init__(self, nodes: tuple, tags: tuple, counts: tuple):
        self.nodes = nodes
        self.tags = tags
        self.counts = counts
        self.key = tuple(n.uid for n in nodes)

    @property
    def depth(self) -> int:
        return sum(self.counts)

    @property
    def stack_index(self) -> tuple[int, int, int]:
        return self.counts[:3]

    def is_goal(self, root_label: int) -> bool:
        return (len(self.nodes) == 1 and self.nodes[0].label == root_label
                and self.nodes[0].complete)

    def candidates(self, dwc: int) -> list[int]:
        """Positions of the first ``dwc`` nodes that still need a feature."""
        out = []
        for i, n in enumerate(self.nodes):
            if n.next_feature() is not None:
                out.append(i)
                if len(out) == dwc:
                    break
        return out

    def active_counts(self) -> list[int]:
        """For each position, the number of incomplete nodes to its left."""
        out, seen = [], 0
        for n in self.nodes:
            out.append(seen)
            if n.next_feature() is not None:
                seen += 1
        return out

    def __repr__(self):
        return f"State({self.counts}, {len(self.nodes)} nodes)"


# -- head table ---------------------------------------------------------------

@dataclass
class HeadRule:
    direction: str
    priority: dict  # item name -> rank (lower wins)


class TreeHeadTable:
    """Deterministic head selection: per label, a direction and a ranked list
    of child tags/labels."""

    def __init__(self, rows: dict[str, HeadRule]):
        self.rows = rows

    @classmethod
    def loads(cls, text: str) -> "TreeHeadTable":
        rows = {}
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ConfigError(f"head table line {n}: expected LABEL<TAB>direction<TAB>items")
            label, direction, items = parts
            if direction not in (LEFT_TO_RIGHT, RIGHT_TO_LEFT):
                raise ConfigError(f"head table line {n}: bad direction {direction!r}")
            prio: dict[str, int] = {}
            for rank, item in enumerate(items.split()):
                prio.setdefault(item, rank)
            rows[label] = HeadRule(direction, prio)
        return cls(rows)

    @classmethod
    def load(cls, path) -> "TreeHeadTable":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())

    @classmethod
    def default(cls) -> "TreeHeadTable":
        text = resources.files("dtparse.data").joinpath("tree_head_table.tsv").read_text(encoding="utf-8")
        return cls.loads(text)

    def dumps(self) -> str:
        lines = []
        for label, rule in self.rows.items():
            items = " ".join(sorted(rule.priority, key=rule.priority.get))
            lines.append(f"{label}\t{rule.direction}\t{items}")
        return "\n".join(lines) + "\n"

    def rule(self, label: str) -> HeadRule:
        try:
            return self.rows[label]
        except KeyError:
            raise ConfigError(f"no head table row for label {label!r}") from None

    def head_index(self, label: str, child_items: Sequence[str]) -> int | None:
        """Index of the head child given each child's tag (leaf) or label."""
        rule = self.rule(label)
        best, best_rank = None, None
        order = range(len(child_items))
        if rule.direction == RIGHT_TO_LEFT:
            order = reversed(order)
        for i in order:
            rank = rule.priority.get(child_items[i])
            if rank is not None and (best_rank is None or rank < best_rank):
                best, best_rank = i, rank
        return best

    def check_labels(self, labels) -> None:
        missing = [lab for lab in labels if lab not in self.rows]
        if missing:
            raise ConfigError(f"head table has no row for labels {missing}")


def tree_heads(tree: Tree, tht: TreeHeadTable) -> dict:
    """Head ``(surface, tag)`` of every internal node, keyed by ``id(node)``.
    Nodes whose row matches no child get ``None``."""
    heads: dict = {}

    def visit(node):
        if isinstance(node, Token):
            return (node.surface, node.tag)
        child_heads = [visit(c) for c in node.children]
        items = [c.tag if isinstance(c, Token) else c.label for c in node.children]
        i = tht.head_index(node.label, items)
        h = child_heads[i] if i is not None else None
        heads[id(node)] = h
        return h

    visit(tree)
    return heads


# -- constituents ---------------------------------------------------------------

def detect_constituent(exts: Sequence, x: int):
    """Find the constituent closed by completing position ``x``.

    ``exts`` holds the extension of every completed node and ``None`` for
    incomplete ones.  Returns ``(a, b)`` (inclusive) or ``None``.  A
    constituent is ``left up* right`` or a single ``unary``.
    """
    e = exts[x]
    if e == EXT_UNARY:
        return (x, x)
    if e not in (EXT_LEFT, EXT_RIGHT, EXT_UP):
        return None
    a = b = x
    if e in (EXT_RIGHT, EXT_UP):
        a = x - 1
        while a >= 0 and exts[a] == EXT_UP:
            a -= 1
        if a < 0 or exts[a] != EXT_LEFT:
            return None
    if e in (EXT_LEFT, EXT_UP):
        b = x + 1
        while b < len(exts) and exts[b] == EXT_UP:
            b += 1
        if b >= len(exts) or exts[b] != EXT_RIGHT:
            return None
    return (a, b)


def tree_extensions(tree: Tree) -> dict:
    """Gold extension name of every node in a ``GOD``-rooted tree, keyed by id."""
    out = {id(tree): "root"}
    for node in tree.subtrees():
        n = len(node.children)
        for i, child in enumerate(node.children):
            if n == 1:
                ext = "unary"
            elif i == 0:
                ext = "left"
            elif i == n - 1:
                ext = "right"
            else:
                ext = "up"
            out[id(child)] = ext
    return out


# -- question vocabularies for miscellaneous counts ----------------------------

def numchildren_item(n: int) -> str:
    return str(n) if n <= 5 else ">5"


def count_item(n: int) -> str:
    """Bucket used by the node-count and span tables."""
    if n <= 5:
        return str(max(n, 1))
    if n <= 10:
        return "6-10"
    if n <= 20:
        return "11-20"
    return ">20"


def unary_depth(node: PNode) -> int:
    """Number of stacked single-child internal nodes starting at ``node``."""
    d = 0
    while node.children and len(node.children) == 1:
        d += 1
        node = node.children[0]
    return d


def tree_unary_depth(tree: Tree) -> int:
    best = 0
    for node in tree.subtrees():
        d, cur = 0, node
        while isinstance(cur, Tree) and len(cur.children) == 1:
            d += 1
            cur = cur.children[0]
        best = max(best, d)
    return best


def is_root_label(name: str) -> bool:
    return name == ROOT_LABEL
