"""Reading and writing Lancaster-style bracketed treebank files.

A sentence looks like::

    [N It_PPH1 N] [V indicates_VVZ ... V] ._.

Constituents are ``[L ... L]`` with the label repeated on the closing
bracket; leaves are ``surface_TAG``.  Every parsed sentence is wrapped in a
single root node labeled ``GOD``, which is not written back out.
"""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from fractions import Fraction

logger = logging.getLogger(__name__)

ROOT_LABEL = "GOD"
UNKNOWN_WORD = "<unk>"
CONJ_SUFFIXES = ("&", "+")


class TreebankError(ValueError):
    """Malformed bracketed input; ``offset`` is a byte offset into the line."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass(eq=False)
class Token:
    surface: str
    tag: str
    start: int = 0

    @property
    def end(self) -> int:
        return self.start + 1

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.start + 1)

    def is_leaf(self) -> bool:
        return True


@dataclass(eq=False)
class Tree:
    """An internal treebank node.

    ``suffix`` keeps the original conjunction marker (``&`` or ``+``) so the
    tree re-serializes to its input; ``conj`` is the boolean view of it.
    ``marks`` holds ``@`` co-indexing markers written before/after the node.
    """

    label: str
    children: list = field(default_factory=list)
    suffix: str = ""
    marks: tuple[str, str] = ("", "")
    start: int = 0
    end: int = 0

    @property
    def conj(self) -> bool:
        return bool(self.suffix)

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    def is_leaf(self) -> bool:
        return False

    def leaves(self) -> list[Token]:
        out = []
        for child in self.children:
            if isinstance(child, Token):
                out.append(child)
            else:
                out.extend(child.leaves())
        return out

    def words(self) -> list[str]:
        return [t.surface for t in self.leaves()]

    def tags(self) -> list[str]:
        return [t.tag for t in self.leaves()]

    def subtrees(self) -> Iterator["Tree"]:
        """Internal nodes in pre-order, self first."""
        yield self
        for child in self.children:
            if isinstance(child, Tree):
                yield from child.subtrees()

    def max_fanout(self) -> int:
        return max(len(t.children) for t in self.subtrees())

    def __len__(self) -> int:
        return self.end - self.start

    def __str__(self) -> str:
        return serialize(self)


def _renumber(node, start: int) -> int:
    if isinstance(node, Token):
        node.start = start
        return start + 1
    node.start = start
    pos = start
    for child in node.children:
        pos = _renumber(child, pos)
    node.end = pos
    return pos


def _tokenize(line: str) -> list[tuple[str, int]]:
    """Split into ``[``, ``]`` and atom tokens with their byte offsets."""
    tokens = []
    encoded = line.encode("utf-8")
    # byte offsets for each character position
    offsets = []
    pos = 0
    for ch in line:
        offsets.append(pos)
        pos += len(ch.encode("utf-8"))
    offsets.append(len(encoded))
    i = 0
    n = len(line)
    while i < n:
        ch = line[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "[":
            tokens.append(("[", offsets[i]))
            i += 1
            continue
        j = i
        while j < n and not line[j].isspace() and line[j] != "[":
            if line[j] == "]":
                break
            j += 1
        if j < n and line[j] == "]":
            # closing label glued to the bracket, e.g. ``N]``
            tokens.append(("]" + line[i:j], offsets[i]))
            i = j + 1
            continue
        tokens.append((line[i:j], offsets[i]))
        i = j
    return tokens


def _split_label(raw: str, offset: int) -> tuple[str, str]:
    if not raw:
        raise TreebankError("missing constituent label", offset)
    suffix = ""
    if raw[-1] in CONJ_SUFFIXES and len(raw) > 1:
        suffix = raw[-1]
        raw = raw[:-1]
    return raw, suffix


def parse_bracketed(line: str) -> Tree:
    """Parse one bracketed sentence into a ``GOD``-rooted tree."""
    tokens = _tokenize(line)
    root = Tree(ROOT_LABEL)
    stack: list[tuple[Tree, int]] = [(root, 0)]
    pending_mark = ""
    i = 0
    last_closed = None
    while i < len(tokens):
        tok, off = tokens[i]
        if tok == "[":
            if i + 1 >= len(tokens) or tokens[i + 1][0] in ("[",) or tokens[i + 1][0].startswith("]"):
                raise TreebankError("missing constituent label", off)
            raw_label, loff = tokens[i + 1]
            label, suffix = _split_label(raw_label, loff)
            node = Tree(label, suffix=suffix, marks=(pending_mark, ""))
            pending_mark = ""
            stack[-1][0].children.append(node)
            stack.append((node, off))
            i += 2
            last_closed = None
            continue
        if tok.startswith("]"):
            raw_label = tok[1:]
            if len(stack) == 1:
                raise TreebankError("unbalanced closing bracket", off)
            node, _ = stack.pop()
            label, suffix = _split_label(raw_label, off)
            if label != node.label or suffix != node.suffix:
                raise TreebankError(
                    f"closing label {raw_label!r} does not match {node.label + node.suffix!r}", off
                )
            if not node.children:
                raise TreebankError("empty constituent", off)
            last_closed = node
            i += 1
            continue
        if tok == "@":
            # co-indexing marker: kept only so the tree re-serializes; it
            # attaches after the constituent just closed, else before the next
            if last_closed is not None and not last_closed.marks[1]:
                last_closed.marks = (last_closed.marks[0], "@")
            else:
                pending_mark = "@"
            i += 1
            continue
        # a leaf
        cut = tok.rfind("_")
        if cut <= 0 or cut == len(tok) - 1:
            raise TreebankError(f"malformed leaf {tok!r}; expected surface_TAG", off)
        stack[-1][0].children.append(Token(tok[:cut], tok[cut + 1:]))
        last_closed = None
        i += 1
    if len(stack) != 1:
        raise TreebankError("unbalanced brackets: unclosed constituent", stack[-1][1])
    if not root.children:
        raise TreebankError("empty sentence", 0)
    _renumber(root, 0)
    return root


def _serialize_node(node) -> str:
    if isinstance(node, Token):
        return f"{node.surface}_{node.tag}"
    lab = node.label + node.suffix
    inner = " ".join(_serialize_node(c) for c in node.children)
    before, after = node.marks
    text = f"{before}[{lab} {inner} {lab}]"
    if after:
        text += " " + after
    return text


def serialize(tree: Tree) -> str:
    """Bracketed text for a tree; a ``GOD`` root is written as its children."""
    if tree.label == ROOT_LABEL:
        return " ".join(_serialize_node(c) for c in tree.children)
    return _serialize_node(tree)


def read_treebank(lines: Iterable[str]) -> Iterator[Tree]:
    """Yield trees from a text stream.

    One tree per line, or one tree spread over several physical lines until
    its brackets balance.  Blank lines and ``#`` comment lines are skipped.
    """
    buf: list[str] = []
    depth = 0
    for raw in lines:
        line = raw.rstrip("\n")
        if not buf and (not line.strip() or line.lstrip().startswith("#")):
            continue
        buf.append(line)
        depth += line.count("[") - line.count("]")
        if depth <= 0:
            text = " ".join(buf)
            buf = []
            depth = 0
            yield parse_bracketed(text)
    if buf:
        raise TreebankError("unbalanced brackets at end of input", None)


def load_treebank(path) -> list[Tree]:
    with open(path, encoding="utf-8") as fh:
        return list(read_treebank(fh))


def write_treebank(path, trees: Iterable[Tree]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trees:
            fh.write(serialize(t) + "\n")


def filter_training(trees: Sequence[Tree], min_len: int = 3, max_len: int = 30,
                    max_children: int = 8) -> list[Tree]:
    """Keep sentences of ``min_len..max_len`` words with fan-out <= ``max_children``."""
    return [t for t in trees
            if min_len <= len(t.leaves()) <= max_len and t.max_fanout() <= max_children]


def normalize_capitalization(surface: str, sentence_initial: bool) -> str:
    """Lowercase a sentence-initial token whose only capital is its first letter."""
    if not sentence_initial or not surface or not surface[0].isupper():
        return surface
    rest = surface[1:]
    if any(ch.isupper() for ch in rest):
        return surface
    return surface[0].lower() + rest


def sentence_words(surfaces: Sequence[str]) -> list[str]:
    return [normalize_capitalization(w, i == 0) for i, w in enumerate(surfaces)]


class Vocabulary:
    """An ordered, frozen item <-> id mapping with an optional unknown entry."""

    def __init__(self, items: Iterable[str], unknown: str | None = None):
        self.items: list[str] = []
        self.index: dict[str, int] = {}
        self.unknown = unknown
        if unknown is not None:
            self._add(unknown)
        for it in items:
            if it not in self.index:
                self._add(it)

    def _add(self, item):
        self.index[item] = len(self.items)
        self.items.append(item)

    def __len__(self):
        return len(self.items)

    def __contains__(self, item):
        return item in self.index

    def __iter__(self):
        return iter(self.items)

    def id(self, item) -> int:
        try:
            return self.index[item]
        except KeyError:
            if self.unknown is None:
                raise KeyError(f"{item!r} not in vocabulary") from None
            return self.index[self.unknown]

    def map(self, item) -> str:
        """Map an item onto the vocabulary, folding unseen ones into unknown."""
        if item in self.index:
            return item
        if self.unknown is None:
            raise KeyError(f"{item!r} not in vocabulary")
        return self.unknown

    def item(self, i: int) -> str:
        return self.items[i]


def build_word_vocabulary(trees: Sequence[Tree], target_oov_rate: float = 0.05) -> Vocabulary:
    """Pick words by descending frequency so the left-over token mass is
    as close as possible to ``target_oov_rate``.  Ties prefer the smaller
    vocabulary; ``<unk>`` is always present."""
    counts: Counter = Counter()
    for t in trees:
        counts.update(sentence_words(t.words()))
    total = sum(counts.values())
    if total == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    target = Fraction(target_oov_rate).limit_denominator(10**9) * total
    best_k, best_gap = 0, abs(total - target)
    kept = 0
    for k, (_, c) in enumerate(ranked, start=1):
        kept += c
        gap = abs((total - kept) - target)
        if gap < best_gap:
            best_k, best_gap = k, gap
    return Vocabulary([w for w, _ in ranked[:best_k]], unknown=UNKNOWN_WORD)


def build_vocabulary(items: Iterable[str]) -> Vocabulary:
    """Frequency-ordered vocabulary of every item seen."""
    counts = Counter(items)
    return Vocabulary(sorted(counts, key=lambda k: (-counts[k], k)))


def tag_vocabulary(trees: Sequence[Tree]) -> Vocabulary:
    return build_vocabulary(tag for t in trees for tag in t.tags())


def label_vocabulary(trees: Sequence[Tree]) -> Vocabulary:
    labels = [sub.label for t in trees for sub in t.subtrees()]
    vocab = build_vocabulary(labels)
    if ROOT_LABEL not in vocab:
        vocab._add(ROOT_LABEL)
    return vocab


class TagDictionary:
    """Word -> allowed tags, listed from the (word, tag) pairs in training."""

    def __init__(self, allowed: dict[str, set[str]] | None = None):
        self.allowed: dict[str, set[str]] = allowed or {}

    @classmethod
    def from_trees(cls, trees: Iterable[Tree], vocab: Vocabulary | None = None) -> "TagDictionary":
        allowed: dict[str, set[str]] = {}
        for t in trees:
            words = sentence_words(t.words())
            for w, tag in zip(words, t.tags()):
                key = vocab.map(w) if vocab is not None else w
                allowed.setdefault(key, set()).add(tag)
        return cls(allowed)

    def tags_for(self, word: str) -> set[str]:
        return self.allowed.get(word, set())

    def __contains__(self, word):
        return word in self.allowed

    def dumps(self, tag_order: Sequence[str] | None = None) -> str:
        rank = {t: i for i, t in enumerate(tag_order)} if tag_order else {}
        lines = []
        for w in sorted(self.allowed):
            tags = sorted(self.allowed[w], key=lambda t: (rank.get(t, len(rank)), t))
            lines.append(f"{w}\t{','.join(tags)}")
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def loads(cls, text: str) -> "TagDictionary":
        allowed = {}
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                word, tags = line.split("\t")
            except ValueError:
                raise TreebankError(f"tag dictionary line {n}: expected word<TAB>tags") from None
            allowed[word] = set(filter(None, tags.split(",")))
        return cls(allowed)


def load_vocabulary_file(path, unknown: str | None = None) -> Vocabulary:
    """Read the item column of an ``item<TAB>bitstring`` file."""
    items = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            items.append(line.split("\t")[0])
    return Vocabulary(items, unknown=unknown)
