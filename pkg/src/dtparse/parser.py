"""State expansion and stack decoding.

A state is an array of partial trees over the sentence.  Each expansion
assigns one feature value at one node, chosen among the first ``dwc``
incomplete nodes (labels and conjunction bits are assigned at once, without
a choice of node).  When a node completes and closes a ``left up* right``
run, or is ``unary``, the run is wrapped in a new empty parent.

The decoder buckets states by how many tag, label and extension decisions
they contain and prunes each bucket relative to its best live state.
Pruning is temporary: a bucket whose best states turn out to lead nowhere
lowers its threshold on the next sweep.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .features import (
    CONJ, EXT, EXT_LEFT, EXT_RIGHT, EXT_ROOT, EXT_UNARY, EXT_UP, LABEL, NULL, TAG,
    UNASSIGNED, NodeTable, PNode, State, detect_constituent, unary_depth,
)
from .models import Context, ModelSet, Sentence
from .treebank import ROOT_LABEL, Token, Tree, _renumber

logger = logging.getLogger(__name__)


@dataclass
class DecoderConfig:
    stack_lambda: float = 0.01
    max_stack_size: int = 10_000
    max_expansions: int = 200_000
    top_k: int = 1

    def __post_init__(self):
        if not 0.0 <= self.stack_lambda <= 1.0:
            raise ValueError("stack_lambda must be in [0, 1]")


@dataclass
class Transition:
    state: State
    logp: float
    # (model name, context, future) for every model decision on this edge
    decisions: tuple


# Oracle signature: (state, position, feature) -> the only value allowed, or
# None to allow every value.  Returning a value outside the model support
# kills the edge.
Oracle = Callable[[State, int, str], "int | None"]


class Expander:
    """Generates successor states under the derivational window constraint."""

    def __init__(self, models: ModelSet, sentence: Sentence, oracle: Oracle | None = None):
        self.models = models
        self.grammar = models.grammar
        self.cfg = models.config
        self.sentence = sentence
        self.oracle = oracle
        self.table = NodeTable()
        self.n = len(sentence.word_ids)
        if self.n == 0:
            raise ValueError("cannot parse an empty sentence")

    def initial(self) -> State:
        leaves = tuple(self.table.make(w, UNASSIGNED, UNASSIGNED, UNASSIGNED, UNASSIGNED, i, i + 1)
                       for i, w in enumerate(self.sentence.word_ids))
        return State(leaves, (UNASSIGNED,) * self.n, (0, 0, 0, 0))

    def is_goal(self, state: State) -> bool:
        return state.is_goal(self.grammar.root_label)

    def successors(self, state: State) -> list[Transition]:
        cands = state.candidates(self.cfg.dwc)
        if not cands:
            return []
        nodes = state.nodes
        for x in cands:
            if nodes[x].next_feature() in (LABEL, CONJ):
                return self._assign_all(state, x, 0.0, None)
        if len(cands) == 1 or not self.cfg.use_derivation:
            return self._assign_all(state, cands[0], 0.0, None)
        ctx = Context(state, cands[0], tuple(cands))
        lps = self.models.score_active(ctx, self.sentence)
        out = []
        for j, x in enumerate(cands):
            out.extend(self._assign_all(state, x, lps[j], ("derivation", ctx, j)))
        return out

    def _assign_all(self, state, x, lp_active, active_decision):
        node = state.nodes[x]
        feature = node.next_feature()
        ctx = Context(state, x)
        values, lps = self.models.score(feature, ctx, self.sentence)
        only = self.oracle(state, x, feature) if self.oracle is not None else None
        model = {TAG: "tag", LABEL: "label", EXT: "ext", CONJ: "conj"}[feature]
        out = []
        for v, lp in zip(values, lps):
            if only is not None and v != only:
                continue
            new = self.assign(state, x, feature, v)
            if new is None:
                continue
            decisions = ((active_decision,) if active_decision else ()) + ((model, ctx, v),)
            out.append(Transition(new, lp_active + lp, decisions))
        return out

    def _close(self, node: PNode) -> PNode:
        """Deterministic follow-ups once label and conjunction are known:
        the head word/tag, and the root extension for the root label."""
        word, tag = self.grammar.head_of(node.label, node.children)
        ext = EXT_ROOT if node.label == self.grammar.root_label else node.ext
        return self.table.replace(node, word=word, tag=tag, ext=ext)

    def assign(self, state: State, x: int, feature: str, value: int) -> State | None:
        """The state after setting ``feature`` of node ``x``; ``None`` if the
        result can never reach a complete parse."""
        node = state.nodes[x]
        t, lab, e, c = state.counts
        tags = state.tags
        if feature == TAG:
            new = self.table.replace(node, tag=value)
            tags = tags[:node.start] + (value,) + tags[node.start + 1:]
            t += 1
        elif feature == LABEL:
            if value == self.grammar.root_label and not (node.start == 0 and node.end == self.n):
                return None
            new = self.table.replace(node, label=value)
            lab += 1
            # the root has no siblings, so its conjunction flag is fixed
            if not self.cfg.use_conjunction or value == self.grammar.root_label:
                new = self._close(self.table.replace(new, conj=0))
        elif feature == CONJ:
            new = self._close(self.table.replace(node, conj=value))
            c += 1
        elif feature == EXT:
            new = self.table.replace(node, ext=value)
            e += 1
        else:
            raise ValueError(feature)
        nodes = list(state.nodes)
        nodes[x] = new
        if feature == EXT:
            exts = [n.ext if n.next_feature() is None else None for n in nodes]
            run = detect_constituent(exts, x)
            if run is not None:
                a, b = run
                if b - a + 1 > self.cfg.max_children:
                    return None
                kids = tuple(nodes[a:b + 1])
                parent = self.table.make(UNASSIGNED, UNASSIGNED, UNASSIGNED, UNASSIGNED, UNASSIGNED,
                                         kids[0].start, kids[-1].end, kids)
                if unary_depth(parent) > self.cfg.max_unary_chain:
                    return None
                nodes[a:b + 1] = [parent]
        if not self._viable(nodes):
            return None
        return State(tuple(nodes), tags, (t, lab, e, c))

    def _viable(self, nodes) -> bool:
        last = len(nodes) - 1
        open_run = 0
        for i, nd in enumerate(nodes):
            if nd.next_feature() is not None:
                open_run = 0
                continue
            ext = nd.ext
            if ext == EXT_ROOT:
                if last != 0:
                    return False
                continue
            if i == 0 and ext in (EXT_UP, EXT_RIGHT):
                return False
            if i == last and ext in (EXT_LEFT, EXT_UP):
                return False
            if i < last:
                nxt = nodes[i + 1]
                if nxt.next_feature() is None:
                    if (ext in (EXT_LEFT, EXT_UP)) != (nxt.ext in (EXT_UP, EXT_RIGHT)):
                        return False
            if ext == EXT_LEFT:
                open_run = 1
            elif ext == EXT_UP and open_run:
                open_run += 1
            else:
                open_run = 0
            if open_run >= self.cfg.max_children:
                return False
        return True


# -- stack decoding ----------------------------------------------------------

@dataclass(eq=False)
class _Rec:
    state: State
    logscore: float
    parents: set = field(default_factory=set)
    edges: list | None = None  # (child key, logp) once expanded


@dataclass
class ParseResult:
    trees: list  # ranked list of (Tree, natural-log probability)
    goal_states: list
    best_partial: State | None = None
    expansions: int = 0
    noparse: bool = False

    @property
    def best(self):
        return self.trees[0] if self.trees else None


class StackDecoder:
    """Stack search with thresholded, temporary pruning per stack."""

    def __init__(self, models: ModelSet, config: DecoderConfig | None = None):
        self.models = models
        self.config = config or DecoderConfig()

    def search(self, sentence: Sentence, oracle: Oracle | None = None):
        """Run the search; returns ``(records, goal keys, expansions)``."""
        cfg = self.config
        ex = Expander(self.models, sentence, oracle)
        init = ex.initial()
        recs: dict = {init.key: _Rec(init, 0.0)}
        stacks: dict = defaultdict(set)
        stacks[init.counts].add(init.key)
        goals: set = set()
        expansions = 0
        log_lambda = math.log(cfg.stack_lambda) if cfg.stack_lambda > 0 else -math.inf

        def add_mass(key, delta):
            # push late-arriving mass through already-expanded descendants
            pending = [(key, delta)]
            while pending:
                k, d = pending.pop()
                r = recs.get(k)
                if r is None:
                    continue
                r.logscore = np.logaddexp(r.logscore, d)
                if r.edges:
                    for ck, lp in r.edges:
                        if ck in recs:
                            pending.append((ck, d + lp))

        def expand(key):
            r = recs[key]
            r.edges = []
            for tr in ex.successors(r.state):
                ck = tr.state.key
                mass = r.logscore + tr.logp
                r.edges.append((ck, tr.logp))
                child = recs.get(ck)
                if child is None:
                    child = _Rec(tr.state, mass)
                    recs[ck] = child
                    stack = stacks[tr.state.counts]
                    stack.add(ck)
                    if ex.is_goal(tr.state):
                        goals.add(ck)
                    if len(stack) > cfg.max_stack_size:
                        self._evict(stack, recs, goals)
                else:
                    add_mass(ck, mass)
                    child = recs.get(ck)
                if child is not None:
                    child.parents.add(key)

        while expansions < cfg.max_expansions:
            order = sorted(stacks, key=lambda s: -sum(s))
            alive_marks: set = set()
            to_advance = []
            # a state's own mass only shrinks as it is extended, so once a
            # goal exists, states far below it are not worth advancing
            goal_floor = max((recs[k].logscore for k in goals), default=-math.inf) + log_lambda
            for sidx in order:
                keys = stacks[sidx]
                alive = [k for k in keys
                         if k in goals or recs[k].edges is None or k in alive_marks]
                if not alive:
                    continue
                pmax = max(recs[k].logscore for k in alive)
                thr = max(pmax + log_lambda, goal_floor)
                for k in alive:
                    r = recs[k]
                    if r.logscore >= thr:
                        alive_marks.update(r.parents)
                        if r.edges is None and k not in goals:
                            to_advance.append(k)
            if not to_advance:
                break
            # shallow states first so mass arrives before children are expanded
            to_advance.sort(key=lambda k: (recs[k].state.depth, k))
            for k in to_advance:
                if expansions >= cfg.max_expansions:
                    break
                if k in recs and recs[k].edges is None:
                    expand(k)
                    expansions += 1
        else:
            logger.info("search stopped at the expansion limit (%d)", cfg.max_expansions)
        return recs, goals, expansions

    @staticmethod
    def _evict(stack, recs, goals):
        victims = [k for k in stack if recs[k].edges is None and k not in goals]
        if not victims:
            return
        worst = min(victims, key=lambda k: (recs[k].logscore, k))
        stack.discard(worst)
        del recs[worst]

    def decode(self, sentence: Sentence, top_k: int | None = None) -> ParseResult:
        top_k = top_k or self.config.top_k
        recs, goals, n_exp = self.search(sentence)
        ranked = sorted(goals, key=lambda k: (-recs[k].logscore, k))[:top_k]
        trees = [(state_to_tree(recs[k].state, self.models, sentence), float(recs[k].logscore))
                 for k in ranked]
        if not trees:
            best = max(recs.values(), key=lambda r: (r.state.depth, r.logscore))
            return ParseResult([], [], best.state, n_exp, noparse=True)
        return ParseResult(trees, [recs[k].state for k in ranked], None, n_exp)

    def goal_probabilities(self, sentence: Sentence) -> dict:
        """Summed derivation probability of every goal reached, keyed by
        ``signature`` of the goal state."""
        recs, goals, _ = self.search(sentence)
        return {signature(recs[k].state): math.exp(recs[k].logscore) for k in goals}

    def tree_probability(self, tree: Tree, sentence: Sentence) -> float:
        """P(tree | sentence) as accumulated by the search when only the
        feature values of ``tree`` are allowed."""
        recs, goals, _ = self.search(sentence, _gold_oracle(self.models, tree, sentence))
        return float(sum(math.exp(recs[k].logscore) for k in goals))


def signature(state: State) -> tuple:
    """Structural key of a state, comparable across searches."""
    def sig(n: PNode):
        return (n.word, n.tag, n.label, n.ext, n.conj, n.start, n.end,
                tuple(sig(c) for c in n.children))
    return tuple(sig(n) for n in state.nodes)


def decode(sentence: Sentence, models: ModelSet, config: DecoderConfig | None = None,
           top_k: int = 1) -> ParseResult:
    return StackDecoder(models, config).decode(sentence, top_k)


def stack_of(state: State) -> tuple[int, int, int]:
    """The (tags, labels, extensions) decision counts of a state."""
    return state.stack_index


# -- exact derivation sums ------------------------------------------------------

def _gold_oracle(models: ModelSet, tree: Tree, sentence: Sentence):
    """Oracle that only allows the feature values of ``tree``."""
    g = models.grammar
    leaves = tree.leaves()
    parent = {}
    for node in tree.subtrees():
        for ch in node.children:
            parent[id(ch)] = node
    gold_of: dict = {}

    def gold(node: PNode):
        r = gold_of.get(node.uid)
        if r is None:
            if node.is_leaf:
                r = leaves[node.start]
            else:
                first = gold(node.children[0])
                r = parent.get(id(first))
                if r is None or len(r.children) != len(node.children) or any(
                        gold(c) is not gc for c, gc in zip(node.children, r.children)):
                    raise ValueError("state left the gold tree")
            gold_of[node.uid] = r
        return r

    def ext_of(gnode):
        p = parent.get(id(gnode))
        if p is None:
            return EXT_ROOT
        n = len(p.children)
        i = next(j for j, c in enumerate(p.children) if c is gnode)
        if n == 1:
            return EXT_UNARY
        if i == 0:
            return EXT_LEFT
        if i == n - 1:
            return EXT_RIGHT
        return EXT_UP

    def oracle(state, x, feature):
        gnode = gold(state.nodes[x])
        if feature == TAG:
            return g.tag_index.get(gnode.tag, -1)
        if feature == LABEL:
            return g.label_index.get(gnode.label, -1)
        if feature == CONJ:
            return int(gnode.conj)
        return ext_of(gnode)

    return oracle


def derivation_graph(models: ModelSet, sentence: Sentence, oracle: Oracle | None = None,
                     max_states: int | None = None):
    """Every state reachable from the initial state, merged by signature.

    Returns ``(states, edges, expander)`` with states in topological order
    (by decision count) and edges as ``(src index, dst index, Transition)``
    sorted by source.
    """
    ex = Expander(models, sentence, oracle)
    init = ex.initial()
    index = {init.key: 0}
    states = [init]
    layers = [[init.key]]
    raw = []
    depth = 0
    while layers[depth]:
        nxt = []
        for key in layers[depth]:
            st = states[index[key]]
            for tr in ex.successors(st):
                ck = tr.state.key
                if ck not in index:
                    index[ck] = len(states)
                    states.append(tr.state)
                    nxt.append(ck)
                    if max_states is not None and len(states) > max_states:
                        raise OverflowError(f"derivation graph exceeds {max_states} states")
                raw.append((index[key], index[ck], tr))
        layers.append(nxt)
        depth += 1
    raw.sort(key=lambda e: e[0])
    return states, raw, ex


def parse_probability(tree: Tree, sentence: Sentence, models: ModelSet) -> float:
    """P(tree | sentence): the sum over all window-legal derivations, by
    dynamic programming over merged states."""
    oracle = _gold_oracle(models, tree, sentence)
    states, edges, ex = derivation_graph(models, sentence, oracle)
    logm = np.full(len(states), -np.inf)
    logm[0] = 0.0
    for s, d, tr in edges:
        logm[d] = np.logaddexp(logm[d], logm[s] + tr.logp)
    goals = [i for i, st in enumerate(states) if ex.is_goal(st)]
    if not goals:
        return 0.0
    return float(sum(math.exp(logm[i]) for i in goals))


def brute_force_probabilities(models: ModelSet, sentence: Sentence,
                              oracle: Oracle | None = None, limit: int = 5_000_000) -> dict:
    """Sum of derivation products per goal, keyed by ``signature``, by
    enumerating every path separately (no state merging).  Exponential; for
    tiny inputs only."""
    ex = Expander(models, sentence, oracle)
    out: dict = defaultdict(float)
    visited = [0]

    def walk(state, p):
        visited[0] += 1
        if visited[0] > limit:
            raise OverflowError("too many derivation paths")
        if ex.is_goal(state):
            out[signature(state)] += p
            return
        for tr in ex.successors(state):
            walk(tr.state, p * math.exp(tr.logp))

    walk(ex.initial(), 1.0)
    return dict(out)


def brute_force_probability(tree: Tree, sentence: Sentence, models: ModelSet) -> float:
    probs = brute_force_probabilities(models, sentence, _gold_oracle(models, tree, sentence))
    return float(sum(probs.values()))


# -- output ---------------------------------------------------------------------

def state_to_tree(state: State, models: ModelSet, sentence: Sentence) -> Tree:
    """A finished (or partial) state as a ``GOD``-rooted treebank tree."""
    g = models.grammar
    surfaces = sentence.surfaces

    def convert(node: PNode):
        if node.is_leaf:
            tag = g.tags[node.tag] if node.tag >= 0 else "?"
            return Token(surfaces[node.start], tag)
        label = g.labels[node.label] if node.label >= 0 else "?"
        kids = [convert(c) for c in node.children]
        _mark_conjuncts(node.children, kids)
        return Tree(label, kids)

    if len(state.nodes) == 1 and state.nodes[0].label == g.root_label:
        root = convert(state.nodes[0])
    else:
        kids = [convert(n) for n in state.nodes]
        _mark_conjuncts(state.nodes, kids)
        root = Tree(ROOT_LABEL, kids)
    _renumber(root, 0)
    return root


def _mark_conjuncts(pnodes, kids):
    seen = False
    for pn, kid in zip(pnodes, kids):
        if isinstance(kid, Tree) and pn.conj == 1:
            kid.suffix = "+" if seen else "&"
            seen = True
