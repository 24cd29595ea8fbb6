"""Vocabularies, question catalogs and the five conditional models.

Every parser decision is scored by a smoothed decision tree that looks at
the partial parse through a fixed window: two nodes either side of the
current node, up to four of its children, nearby words and tags, and a few
counts.  Each window value is read through a binary classification tree so
all questions are single bits.
"""

from __future__ import annotations

import logging
import math
import os
from collections import Counter
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import bct as bctmod
from .features import (
    CONJ, EXT, EXT_NAMES, EXTENSIONS, LABEL, NULL, RIGHT_TO_LEFT, TAG, UNASSIGNED,
    ConfigError, PNode, State, TreeHeadTable, count_item, numchildren_item,
)
from .sdt import DecisionTree, uniform_tree
from .treebank import (
    ROOT_LABEL, TagDictionary, Tree, Vocabulary, build_word_vocabulary, sentence_words,
)

logger = logging.getLogger(__name__)

MODEL_NAMES = ("tag", "label", "ext", "conj", "derivation")
LOG_FLOOR = -700.0
DEFAULT_CLUSTER_LIMIT = 300


# -- grammar: vocabularies and bit encodings ---------------------------------

class Grammar:
    """Everything needed to read a partial parse as bits."""

    def __init__(self, words: Vocabulary, tags: Sequence[str], labels: Sequence[str],
                 word_bct: bctmod.BCT, tag_bct: bctmod.BCT, label_bct: bctmod.BCT,
                 tht: TreeHeadTable, tag_dict: TagDictionary):
        self.words = words
        self.tags = list(tags)
        self.labels = list(labels)
        if ROOT_LABEL not in self.labels:
            self.labels.append(ROOT_LABEL)
        self.tag_index = {t: i for i, t in enumerate(self.tags)}
        self.label_index = {lab: i for i, lab in enumerate(self.labels)}
        self.root_label = self.label_index[ROOT_LABEL]
        self.word_bct = word_bct
        self.tag_bct = tag_bct
        self.label_bct = label_bct
        self.tht = tht
        self.tag_dict = tag_dict
        tht.check_labels(self.labels)
        ext_table = bctmod.shipped_table("extension")
        # bit codes keyed by the integer ids used inside parse nodes
        self.codes = {
            "word": {i: word_bct.encode(w) for i, w in enumerate(words.items)},
            "tag": {i: tag_bct.encode(t) for i, t in enumerate(self.tags)},
            "label": {i: label_bct.encode(lab) for i, lab in enumerate(self.labels)},
            "ext": {i: ext_table.encode(name) for i, name in enumerate(EXT_NAMES)},
            "conj": {0: "0", 1: "1"},
            "nchildren": dict(bctmod.shipped_table("numchildren").codes),
            "span": dict(bctmod.shipped_table("span").codes),
            "nnodes": dict(bctmod.shipped_table("numnodes").codes),
            "pending": {TAG: "0", EXT: "1"},
        }
        self.depths = {k: max(len(c) for c in v.values()) for k, v in self.codes.items()}
        self.allowed_tags = {
            self.words.id(w): frozenset(self.tag_index[t] for t in ts if t in self.tag_index)
            for w, ts in tag_dict.allowed.items() if w in self.words
        }
        self._compile_heads()

    def _compile_heads(self):
        self.head_rules = []
        for lab in self.labels:
            rule = self.tht.rule(lab)
            tag_rank = {self.tag_index[t]: r for t, r in rule.priority.items() if t in self.tag_index}
            label_rank = {self.label_index[x]: r for x, r in rule.priority.items() if x in self.label_index}
            self.head_rules.append((rule.direction == RIGHT_TO_LEFT, tag_rank, label_rank))

    def head_of(self, label: int, children: Sequence[PNode]) -> tuple[int, int]:
        """Head (word, tag) for a node with the given label and children."""
        rtl, tag_rank, label_rank = self.head_rules[label]
        best, best_rank = None, None
        order = range(len(children) - 1, -1, -1) if rtl else range(len(children))
        for i in order:
            c = children[i]
            rank = tag_rank.get(c.tag) if c.is_leaf else label_rank.get(c.label)
            if rank is not None and (best_rank is None or rank < best_rank):
                best, best_rank = i, rank
        if best is None:
            return NULL, NULL
        return children[best].word, children[best].tag

    def word_id(self, surface: str, sentence_initial: bool = False) -> int:
        from .treebank import normalize_capitalization
        return self.words.id(self.words.map(normalize_capitalization(surface, sentence_initial)))

    # -- persistence --------------------------------------------------------

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        _write(os.path.join(directory, "words.bct"),
               "".join(f"{w}\t{self.word_bct.encode(w)}\n" for w in self.words.items))
        self.tag_bct.dump(os.path.join(directory, "tags.bct"))
        self.label_bct.dump(os.path.join(directory, "labels.bct"))
        _write(os.path.join(directory, "head_table.tsv"), self.tht.dumps())
        _write(os.path.join(directory, "tag_dictionary.tsv"), self.tag_dict.dumps(self.tags))
        _write(os.path.join(directory, "vocab.txt"),
               f"unknown\t{self.words.unknown or ''}\n"
               f"tags\t{' '.join(self.tags)}\nlabels\t{' '.join(self.labels)}\n")

    @classmethod
    def load(cls, directory) -> "Grammar":
        meta = {}
        with open(os.path.join(directory, "vocab.txt"), encoding="utf-8") as fh:
            for line in fh:
                k, _, v = line.rstrip("\n").partition("\t")
                meta[k] = v
        word_bct = bctmod.BCT.load(os.path.join(directory, "words.bct"), name="words")
        words = Vocabulary([w for w in word_bct.items if w != meta["unknown"]],
                           unknown=meta["unknown"] or None)
        with open(os.path.join(directory, "tag_dictionary.tsv"), encoding="utf-8") as fh:
            tag_dict = TagDictionary.loads(fh.read())
        return cls(words, meta["tags"].split(), meta["labels"].split(), word_bct,
                   bctmod.BCT.load(os.path.join(directory, "tags.bct"), name="tags"),
                   bctmod.BCT.load(os.path.join(directory, "labels.bct"), name="labels"),
                   TreeHeadTable.load(os.path.join(directory, "head_table.tsv")), tag_dict)


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _cluster_or_flat(sequences: list[list[str]], items: list[str], limit: int, name: str) -> bctmod.BCT:
    if len(items) < 2:
        return bctmod.BCT.flat(items, name=name)
    if len(items) > limit:
        logger.info("%s vocabulary of %d exceeds clustering limit %d; using flat codes",
                    name, len(items), limit)
        return bctmod.BCT.flat(items, name=name)
    counts: Counter = Counter()
    for seq in sequences:
        for a, b in zip(seq, seq[1:]):
            counts[(a, b)] += 1
    if not counts:
        return bctmod.BCT.flat(items, name=name)
    return bctmod.mi_cluster(dict(counts), items=items, name=name)


def build_grammar(trees: Sequence[Tree], tht: TreeHeadTable | None = None,
                  oov_rate: float = 0.05, cluster_limit: int = DEFAULT_CLUSTER_LIMIT,
                  tags: Sequence[str] | None = None) -> Grammar:
    """Vocabularies, tag dictionary and bit encodings from training trees.

    Words and tags get bitstrings from bigram MI clustering (flat codes past
    ``cluster_limit`` items); labels use the shipped label table when it
    covers them all.
    """
    tht = tht or TreeHeadTable.default()
    words = build_word_vocabulary(trees, oov_rate)
    word_seqs = [[words.map(w) for w in sentence_words(t.words())] for t in trees]
    tag_counts = Counter(tag for t in trees for tag in t.tags())
    tag_list = list(tags) if tags is not None else sorted(tag_counts, key=lambda k: (-tag_counts[k], k))
    label_counts = Counter(s.label for t in trees for s in t.subtrees())
    label_list = sorted(label_counts, key=lambda k: (-label_counts[k], k))
    if ROOT_LABEL not in label_list:
        label_list.append(ROOT_LABEL)
    word_bct = _cluster_or_flat(word_seqs, list(words.items), cluster_limit, "words")
    tag_bct = _cluster_or_flat([t.tags() for t in trees], tag_list, cluster_limit, "tags")
    shipped = bctmod.shipped_table("labels")
    if all(lab in shipped for lab in label_list):
        label_bct = bctmod.BCT({lab: shipped.encode(lab) for lab in label_list}, name="labels")
    else:
        label_bct = bctmod.BCT.flat(label_list, name="labels")
    tag_dict = TagDictionary.from_trees(trees, vocab=words)
    return Grammar(words, tag_list, label_list, word_bct, tag_bct, label_bct, tht, tag_dict)


# -- question window ------------------------------------------------------------

NEIGHBOURS = ("k-1", "k-2", "k+1", "k+2")
CHILDREN = ("c1", "c2", "c-1", "c-2")
NODE_FEATURES = ("word", "tag", "label", "ext", "conj")
_OFFSETS = {"k": 0, "k-1": -1, "k-2": -2, "k+1": 1, "k+2": 2}


@dataclass(frozen=True)
class Context:
    """Where a decision is made: a state, the node position and, for the
    derivation model, the candidate positions."""

    state: State
    x: int
    cands: tuple = ()


def _slot_node(ctx: Context, slot: str):
    nodes = ctx.state.nodes
    if slot in _OFFSETS:
        i = ctx.x + _OFFSETS[slot]
        return nodes[i] if 0 <= i < len(nodes) else None
    if slot == "a1":
        return nodes[ctx.cands[1]] if len(ctx.cands) > 1 else None
    k = nodes[ctx.x]
    ch = k.children
    n = len(ch)
    if n == 0:
        return None
    j = int(slot[1:])
    if j > 0:
        return ch[min(j - 1, n - 1)]
    return ch[max(n + j, 0)]


def _fall_side(slot: str) -> str:
    if slot in ("k-1", "k-2", "c-1", "c-2"):
        return "right"
    if slot in ("k+1", "k+2", "c1", "c2"):
        return "left"
    return "head"


def node_feature(node: PNode | None, feature: str, side: str, grammar: Grammar):
    """A node's feature value, falling through to its nearest child while
    the value is unassigned.  ``None`` means absent."""
    while node is not None:
        v = getattr(node, feature)
        if v != UNASSIGNED:
            return None if v == NULL else v
        ch = node.children
        if not ch:
            return None
        if side == "left":
            node = ch[0]
        elif side == "right":
            node = ch[-1]
        elif node.label != UNASSIGNED and not grammar.head_rules[node.label][0]:
            node = ch[0]
        else:
            node = ch[-1]
    return None


class Catalog:
    """The ordered bit questions a model may ask.

    A group is one multi-valued window feature; each of its bits is one
    question.  Question indices follow group order, then bit order.
    """

    def __init__(self, groups: list[tuple], grammar: Grammar):
        self.groups = groups
        self.kinds = [_group_kind(g) for g in groups]
        self.questions: list[tuple[int, int]] = []
        self.offsets = []
        for gi, kind in enumerate(self.kinds):
            self.offsets.append(len(self.questions))
            for b in range(grammar.depths[kind]):
                self.questions.append((gi, b))
        self.grammar = grammar

    def __len__(self):
        return len(self.questions)

    def names(self) -> list[str]:
        return [f"{'/'.join(map(str, self.groups[g]))}#{b}" for g, b in self.questions]

    def value(self, ctx: Context, gi: int, sentence_words: Sequence[int]):
        g = self.groups[gi]
        st = ctx.state
        kind = g[0]
        if kind == "node":
            _, slot, feat = g
            return node_feature(_slot_node(ctx, slot), feat, _fall_side(slot), self.grammar)
        k = st.nodes[ctx.x]
        if kind == "w":
            i = k.start + g[1]
            return sentence_words[i] if 0 <= i < len(sentence_words) else None
        if kind == "t":
            i = k.start + g[1]
            if 0 <= i < len(st.tags) and st.tags[i] != UNASSIGNED:
                return st.tags[i]
            return None
        if kind == "etc":
            if g[1] == "nchildren":
                return numchildren_item(len(k.children))
            if g[1] == "span":
                return count_item(k.span)
            return count_item(len(st.nodes))
        if kind == "pending":
            j = g[1]
            if j < len(ctx.cands):
                return st.nodes[ctx.cands[j]].next_feature()
            return None
        raise ConfigError(f"unknown question group {g!r}")

    def code(self, ctx: Context, gi: int, sentence_words) -> str:
        v = self.value(ctx, gi, sentence_words)
        if v is None:
            return ""
        return self.grammar.codes[self.kinds[gi]].get(v, "")

    def vector(self, ctx: Context, sentence_words) -> np.ndarray:
        """All answers as a bool row; absent bits are ``False``."""
        out = np.zeros(len(self.questions), dtype=bool)
        for gi in range(len(self.groups)):
            code = self.code(ctx, gi, sentence_words)
            off = self.offsets[gi]
            for b, ch in enumerate(code):
                if ch == "1":
                    out[off + b] = True
        return out

    def lazy(self, ctx: Context, sentence_words) -> "LazyAnswers":
        return LazyAnswers(self, ctx, sentence_words)


class LazyAnswers:
    """Answers computed on demand, one window group at a time."""

    __slots__ = ("catalog", "ctx", "words", "cache")

    def __init__(self, catalog, ctx, words):
        self.catalog = catalog
        self.ctx = ctx
        self.words = words
        self.cache = {}

    def __getitem__(self, q: int) -> bool:
        gi, b = self.catalog.questions[q]
        code = self.cache.get(gi)
        if code is None:
            code = self.catalog.code(self.ctx, gi, self.words)
            self.cache[gi] = code
        return b < len(code) and code[b] == "1"


def _group_kind(g: tuple) -> str:
    if g[0] == "node":
        return g[2]
    if g[0] == "w":
        return "word"
    if g[0] == "t":
        return "tag"
    if g[0] == "etc":
        return g[1]
    return g[0]


def _node_groups(slots, feats=NODE_FEATURES):
    return [("node", s, f) for s in slots for f in feats]


def catalog_groups(model: str, tags_only: bool = False) -> list[tuple]:
    etc = [("etc", "nchildren"), ("etc", "span"), ("etc", "nnodes")]
    if model == "tag":
        groups = ([("w", o) for o in (0, -1, -2, 1, 2)] + [("t", o) for o in (-1, -2, 1, 2)]
                  + _node_groups(NEIGHBOURS) + [("etc", "nnodes")])
    elif model == "label":
        groups = _node_groups(NEIGHBOURS) + _node_groups(CHILDREN) + etc
    elif model == "ext":
        groups = (_node_groups(["k"], ("word", "tag", "label", "conj")) + _node_groups(NEIGHBOURS)
                  + _node_groups(CHILDREN) + etc)
    elif model == "conj":
        groups = (_node_groups(["k"], ("word", "tag", "label"))
                  + _node_groups(NEIGHBOURS, ("word", "tag", "label", "ext"))
                  + _node_groups(CHILDREN) + etc)
    elif model == "derivation":
        groups = (_node_groups(["k"]) + _node_groups(NEIGHBOURS) + _node_groups(["a1"])
                  + etc + [("pending", 0), ("pending", 1)])
    else:
        raise ConfigError(f"unknown model {model!r}")
    if tags_only:
        groups = [g for g in groups if g[0] != "w" and not (g[0] == "node" and g[2] == "word")]
    return groups


# -- model set ---------------------------------------------------------------------

@dataclass
class ModelConfig:
    """Knobs that change what the models and the parser may do."""

    dwc: int = 2
    use_derivation: bool = True
    use_conjunction: bool = True
    known_tags: bool = False
    tags_only: bool = False
    flexible_tags: int = 0  # 0 = strict dictionary, 1/5 = add model top-k tags
    max_children: int = 8
    max_unary_chain: int = 4

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in known:
                continue
            default = getattr(cls(), k)
            if isinstance(default, bool):
                out[k] = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes", "on")
            else:
                out[k] = type(default)(v)
        return cls(**out)


class ModelSet:
    """The five decision-tree models plus the grammar they read."""

    def __init__(self, grammar: Grammar, config: ModelConfig | None = None,
                 trees: dict[str, DecisionTree] | None = None):
        self.grammar = grammar
        self.config = config or ModelConfig()
        self.catalogs = {m: Catalog(catalog_groups(m, self.config.tags_only), grammar)
                         for m in MODEL_NAMES}
        self.n_futures = {
            "tag": len(grammar.tags),
            "label": len(grammar.labels),
            "ext": len(EXTENSIONS),
            "conj": 2,
            "derivation": max(2, self.config.dwc),
        }
        self.trees = {m: uniform_tree(self.n_futures[m]) for m in MODEL_NAMES}
        if trees:
            self.trees.update(trees)

    @classmethod
    def uniform(cls, grammar: Grammar, config: ModelConfig | None = None) -> "ModelSet":
        return cls(grammar, config)

    def dist(self, model: str, ctx: Context, sentence_words) -> np.ndarray:
        tree = self.trees[model]
        if tree.root.is_leaf:
            return _dist_at(tree.root, tree.n_futures)
        return tree.smoothed_dist(self.catalogs[model].lazy(ctx, sentence_words))

    # per-decision scores: each returns (values, log-probabilities)

    def score_tag(self, ctx: Context, sentence) -> tuple[list[int], list[float]]:
        leaf = ctx.state.nodes[ctx.x]
        if self.config.known_tags and sentence.gold_tags is not None:
            return [sentence.gold_tags[leaf.start]], [0.0]
        p = self.dist("tag", ctx, sentence.word_ids)
        support = self.grammar.allowed_tags.get(leaf.word)
        if not support or leaf.word == self._unk():
            values = list(range(len(p)))
        else:
            values = set(support)
            if self.config.flexible_tags:
                top = np.argsort(-p, kind="stable")[: self.config.flexible_tags]
                values.update(int(t) for t in top)
            values = sorted(values)
        sel = p[values]
        z = sel.sum()
        if z <= 0:
            return values, [-math.log(len(values))] * len(values)
        return values, [_log(v / z) for v in sel]

    def score_label(self, ctx: Context, sentence) -> tuple[list[int], list[float]]:
        node = ctx.state.nodes[ctx.x]
        full = node.start == 0 and node.end == len(sentence.word_ids)
        p = self.dist("label", ctx, sentence.word_ids)
        root = self.grammar.root_label
        values = [root] if full else []
        values += [i for i in range(len(p)) if i != root]
        return values, [_log(p[v]) for v in values]

    def score_extension(self, ctx: Context, sentence) -> tuple[list[int], list[float]]:
        p = self.dist("ext", ctx, sentence.word_ids)
        return list(range(len(EXTENSIONS))), [_log(v) for v in p]

    def score_conjunction(self, ctx: Context, sentence) -> tuple[list[int], list[float]]:
        p = self.dist("conj", ctx, sentence.word_ids)
        return [0, 1], [_log(p[0]), _log(p[1])]

    def score_active(self, ctx: Context, sentence) -> list[float]:
        """Log-probabilities over the candidate positions in ``ctx.cands``."""
        n = len(ctx.cands)
        if n <= 1 or not self.config.use_derivation:
            return [0.0] + [-math.inf] * (n - 1)
        p = self.dist("derivation", ctx, sentence.word_ids)[:n]
        z = p.sum()
        return [_log(v / z) for v in p]

    def score(self, feature: str, ctx: Context, sentence):
        if feature == TAG:
            return self.score_tag(ctx, sentence)
        if feature == LABEL:
            return self.score_label(ctx, sentence)
        if feature == EXT:
            return self.score_extension(ctx, sentence)
        if feature == CONJ:
            return self.score_conjunction(ctx, sentence)
        raise ValueError(feature)

    def _unk(self):
        w = self.grammar.words
        return w.id(w.unknown) if w.unknown is not None else -99

    # -- persistence ------------------------------------------------------

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        self.grammar.save(directory)
        for m in MODEL_NAMES:
            _write(os.path.join(directory, f"{m}.tree"), self.trees[m].dumps())
        lines = [f"{k} = {v}" for k, v in self.config.to_dict().items()]
        lines += [f"model.{m} = {m}.tree" for m in MODEL_NAMES]
        _write(os.path.join(directory, "manifest.txt"), "\n".join(lines) + "\n")
        for m in MODEL_NAMES:
            _write(os.path.join(directory, f"{m}.questions"), "\n".join(self.catalogs[m].names()) + "\n")

    @classmethod
    def load(cls, directory) -> "ModelSet":
        manifest = os.path.join(directory, "manifest.txt")
        if not os.path.exists(manifest):
            raise ConfigError(f"no model manifest in {directory}")
        conf = {}
        with open(manifest, encoding="utf-8") as fh:
            for line in fh:
                if "=" in line:
                    k, v = (s.strip() for s in line.split("=", 1))
                    conf[k] = v
        grammar = Grammar.load(directory)
        trees = {}
        for m in MODEL_NAMES:
            with open(os.path.join(directory, conf.get(f"model.{m}", f"{m}.tree")), encoding="utf-8") as fh:
                trees[m] = DecisionTree.loads(fh.read())
        return cls(grammar, ModelConfig.from_dict(conf), trees)


def _dist_at(node, k):
    if node.count > 0:
        return node.lam * node.dist + (1.0 - node.lam) / k
    return np.full(k, 1.0 / k)


def _log(p: float) -> float:
    if p <= 0:
        return LOG_FLOOR
    return max(LOG_FLOOR, math.log(p))


@dataclass
class Sentence:
    """Input to the parser: surfaces, word ids and optional gold tag ids."""

    surfaces: list[str]
    word_ids: list[int]
    gold_tags: list[int] | None = None
    gold_tag_names: list[str] | None = field(default=None, repr=False)

    @classmethod
    def from_surfaces(cls, grammar: Grammar, surfaces: Sequence[str],
                      tags: Sequence[str] | None = None) -> "Sentence":
        ids = [grammar.word_id(w, i == 0) for i, w in enumerate(surfaces)]
        gold = None
        if tags is not None:
            try:
                gold = [grammar.tag_index[t] for t in tags]
            except KeyError as exc:
                raise ValueError(f"unknown tag {exc.args[0]!r}") from None
        return cls(list(surfaces), ids, gold, list(tags) if tags is not None else None)

    @classmethod
    def from_tree(cls, grammar: Grammar, tree: Tree, with_tags: bool = True) -> "Sentence":
        return cls.from_surfaces(grammar, tree.words(), tree.tags() if with_tags else None)

    def __len__(self):
        return len(self.word_ids)
