"""Binary classification trees: a prefix-free bitstring per vocabulary item.

Each bit position is a yes/no question about the item.  Trees are either
loaded from ``item<TAB>bitstring`` files or grown by bigram
mutual-information clustering, and can be reoriented node by node
("bit flipping") to make each bit as informative as possible about some
target feature.
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Hashable, Iterable, Mapping, Sequence
from importlib import resources

import numpy as np

from . import _kernels

ABSENT = None
DEFAULT_MAX_CLUSTER_VOCAB = 5000


class BCTError(ValueError):
    pass


class BCT:
    """Item -> bitstring map with prefix-free codes.

    >>> t = BCT({"a": "0", "b": "10", "c": "11"})
    >>> t.answer("b", 1), t.answer("a", 1)
    (0, None)
    """

    def __init__(self, codes: Mapping[Hashable, str], name: str = ""):
        if not codes:
            raise BCTError("a classification tree needs at least one item")
        self.codes: dict = dict(codes)
        self.name = name
        self.mi_history: list[float] | None = None
        for item, bits in self.codes.items():
            if not isinstance(bits, str) or any(b not in "01" for b in bits):
                raise BCTError(f"bad bitstring {bits!r} for {item!r}")
        self._check_prefix_free()
        self._decode = {bits: item for item, bits in self.codes.items()}

    def _check_prefix_free(self):
        ordered = sorted(self.codes.items(), key=lambda kv: kv[1])
        for (a, ca), (b, cb) in zip(ordered, ordered[1:]):
            if cb.startswith(ca):
                raise BCTError(f"bitstring of {a!r} ({ca}) is a prefix of {b!r} ({cb})")
        # an item with the empty code is only legal when it is the sole item
        if len(ordered) > 1 and ordered[0][1] == "":
            raise BCTError(f"empty bitstring for {ordered[0][0]!r}")

    def __len__(self):
        return len(self.codes)

    def __contains__(self, item):
        return item in self.codes

    def __eq__(self, other):
        return isinstance(other, BCT) and self.codes == other.codes

    def __repr__(self):
        return f"BCT({self.name or '?'}, {len(self)} items, depth {self.depth})"

    @property
    def items(self) -> list:
        return list(self.codes)

    @property
    def depth(self) -> int:
        return max(len(c) for c in self.codes.values())

    def encode(self, item) -> str:
        try:
            return self.codes[item]
        except KeyError:
            raise KeyError(f"{item!r} is not in the {self.name or 'classification'} vocabulary") from None

    def decode(self, bits: str):
        try:
            return self._decode[bits]
        except KeyError:
            raise KeyError(f"no item has bitstring {bits!r}") from None

    def answer(self, item, bit_index: int):
        """Bit ``bit_index`` of the item's code as 0/1, or ``ABSENT`` past its end."""
        code = self.encode(item)
        if bit_index < len(code):
            return 1 if code[bit_index] == "1" else 0
        return ABSENT

    def bit_matrix(self, order: Sequence) -> np.ndarray:
        """``(len(order), depth)`` bool matrix; absent bits are False ("no")."""
        m = np.zeros((len(order), self.depth), dtype=bool)
        for r, item in enumerate(order):
            for c, b in enumerate(self.codes[item]):
                m[r, c] = b == "1"
        return m

    def internal_prefixes(self) -> list[str]:
        """Prefixes naming the internal nodes, breadth-first."""
        seen = set()
        for code in self.codes.values():
            for k in range(len(code)):
                seen.add(code[:k])
        return sorted(seen, key=lambda p: (len(p), p))

    def dumps(self) -> str:
        return "".join(f"{item}\t{bits}\n" for item, bits in self.codes.items())

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str, name: str = "") -> "BCT":
        codes = {}
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise BCTError(f"line {n}: expected item<TAB>bitstring, got {line!r}")
            item, bits = parts
            if item in codes:
                raise BCTError(f"line {n}: duplicate item {item!r}")
            codes[item] = bits.strip()
        return cls(codes, name=name)

    @classmethod
    def load(cls, path, name: str = "") -> "BCT":
        with open(path, encoding="utf-8", newline="") as fh:
            return cls.loads(fh.read(), name=name or str(path))

    @classmethod
    def from_merge_tree(cls, tree, name: str = "") -> "BCT":
        """Codes from a nested ``(left, right)`` tuple tree; left is ``0``."""
        codes = {}
        stack = [(tree, "")]
        while stack:
            node, prefix = stack.pop()
            if isinstance(node, tuple):
                left, right = node
                stack.append((right, prefix + "1"))
                stack.append((left, prefix + "0"))
            else:
                codes[node] = prefix
        return cls(codes, name=name)

    @classmethod
    def flat(cls, items: Sequence, name: str = "") -> "BCT":
        """Balanced fixed-width codes in the given order, for vocabularies
        that have neither a shipped table nor clustering data."""
        items = list(items)
        if len(items) == 1:
            return cls({items[0]: "0"}, name=name)
        width = max(1, math.ceil(math.log2(len(items))))
        return cls({it: format(i, f"0{width}b") for i, it in enumerate(items)}, name=name)


def shipped_table(name: str) -> BCT:
    """One of the shipped tables: extension, numchildren, numnodes, span, labels."""
    text = resources.files("dtparse.data").joinpath(f"{name}.bct").read_text(encoding="utf-8")
    return BCT.loads(text, name=name)


def shipped_text(name: str) -> str:
    return resources.files("dtparse.data").joinpath(f"{name}.bct").read_text(encoding="utf-8")


# -- mutual-information clustering -------------------------------------------

def _bigram_matrix(bigram_counts, items=None):
    if isinstance(bigram_counts, Mapping):
        if items is None:
            items = sorted({x for pair in bigram_counts for x in pair}, key=str)
        index = {it: i for i, it in enumerate(items)}
        m = np.zeros((len(items), len(items)))
        for (a, b), c in bigram_counts.items():
            m[index[a], index[b]] += c
    else:
        m = np.asarray(bigram_counts, dtype=float)
        if items is None:
            items = list(range(m.shape[0]))
    return list(items), m


def average_mi(p: np.ndarray) -> float:
    """Average mutual information (bits) between adjacent classes."""
    pl = p.sum(axis=1)
    pr = p.sum(axis=0)
    nz = p > 0
    outer = np.outer(pl, pr)
    return float((p[nz] * np.log2(p[nz] / outer[nz])).sum())


def mi_cluster(bigram_counts, items: Sequence | None = None,
               max_vocab: int = DEFAULT_MAX_CLUSTER_VOCAB, name: str = "") -> BCT:
    """Greedy agglomerative clustering by least loss of average bigram MI.

    ``bigram_counts`` is a ``{(left, right): count}`` mapping or a square
    count matrix.  Every step merges the pair whose union loses the least
    average mutual information, ties going to the lowest pair of slots
    (slots stay ordered by their lowest member).  The resulting tree's
    codes read left=0, right=1.  The MI after each merge is kept on the
    returned tree as ``mi_history``.
    """
    items, counts = _bigram_matrix(bigram_counts, items)
    v = len(items)
    if v < 2:
        raise BCTError("clustering needs at least two items")
    if v > max_vocab:
        raise BCTError(f"vocabulary of {v} exceeds the clustering bound {max_vocab}")
    total = counts.sum()
    if total <= 0:
        raise BCTError("bigram counts are all zero")
    p = counts / total
    nodes: list = list(items)
    history = [average_mi(p)]
    while len(nodes) > 1:
        losses = _kernels.merge_losses(p)
        i, j = _kernels.best_pair(losses)
        merged = p.copy()
        merged[i, :] += merged[j, :]
        merged[:, i] += merged[:, j]
        p = np.delete(np.delete(merged, j, axis=0), j, axis=1)
        nodes[i] = (nodes[i], nodes[j])
        del nodes[j]
        history.append(average_mi(p))
    tree = BCT.from_merge_tree(nodes[0], name=name)
    tree.mi_history = history
    return tree


# -- bit flipping ---------------------------------------------------------------

def _bit_information(codes: Mapping, corpus: Sequence[tuple], depth: int) -> float:
    """Entropy reduction of the target given bit ``depth`` (absent -> no)."""
    yes: Counter = Counter()
    no: Counter = Counter()
    for item, target, weight in corpus:
        code = codes.get(item, "") if item is not None else ""
        side = yes if depth < len(code) and code[depth] == "1" else no
        side[target] += weight
    both = yes + no
    return _entropy_of(both) - _split_entropy(yes, no)


def _entropy_of(c: Counter) -> float:
    n = sum(c.values())
    if n <= 0:
        return 0.0
    return -sum(v / n * math.log2(v / n) for v in c.values() if v > 0)


def _split_entropy(yes: Counter, no: Counter) -> float:
    ny, nn = sum(yes.values()), sum(no.values())
    n = ny + nn
    if n <= 0:
        return 0.0
    return (ny * _entropy_of(yes) + nn * _entropy_of(no)) / n


def _flip(codes: dict, prefix: str) -> dict:
    d = len(prefix)
    out = {}
    for item, code in codes.items():
        if code.startswith(prefix) and len(code) > d:
            code = code[:d] + ("0" if code[d] == "1" else "1") + code[d + 1:]
        out[item] = code
    return out


def bit_flip(tree: BCT, reference_corpus: Iterable, tol: float = 1e-12) -> BCT:
    """Swap the children of any internal node whose swap makes its bit
    carry strictly more information about the target.

    ``reference_corpus`` holds ``(item, target)`` or ``(item, target,
    weight)`` tuples; ``item`` may be ``None`` for an absent slot.  Passes
    repeat until no swap helps, so the result is a fixed point.
    """
    corpus = []
    for rec in reference_corpus:
        if len(rec) == 2:
            corpus.append((rec[0], rec[1], 1.0))
        else:
            corpus.append(tuple(rec))
    codes = dict(tree.codes)
    changed = True
    while changed:
        changed = False
        for prefix in BCT(codes).internal_prefixes():
            d = len(prefix)
            before = _bit_information(codes, corpus, d)
            flipped = _flip(codes, prefix)
            after = _bit_information(flipped, corpus, d)
            if after > before + tol:
                codes = flipped
                changed = True
    out = BCT(codes, name=tree.name)
    out.mi_history = tree.mi_history
    return out
