"""Statistical decision trees over yes/no questions.

Events are rows of a boolean answer matrix ``X`` (one column per candidate
question, ``absent`` already folded into ``False``), integer futures ``y``
and nonnegative weights ``w``.  Trees are grown greedily by average
conditional entropy, optionally pruned, and smoothed by interpolating each
node's distribution with its ancestors' and a uniform floor, the
interpolation weights being fit by forward-backward on held-out events.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

logger = logging.getLogger(__name__)

LAMBDA_INIT = 0.5
_ROUND = 12


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class RMin:
    """Stopping rule for growing.

    ``constant(c)`` stops when the entropy reduction is ``<= c``;
    ``pure_only()`` keeps splitting while any question separates the events;
    ``bit_events(c)`` stops when ``weight * reduction < c``.
    """

    kind: str = "constant"
    value: float = 0.0

    @classmethod
    def constant(cls, c: float = 0.0) -> "RMin":
        return cls("constant", c)

    @classmethod
    def pure_only(cls) -> "RMin":
        return cls("pure", 0.0)

    @classmethod
    def bit_events(cls, c: float) -> "RMin":
        return cls("bit_events", c)

    def stops(self, reduction: float, weight: float) -> bool:
        if self.kind == "pure":
            return False
        if self.kind == "bit_events":
            return reduction <= 1e-12 or weight * reduction < self.value
        return reduction <= self.value + 1e-12


@dataclass(eq=False)
class Node:
    id: int
    parent: int
    side: str  # "Y", "N", or "-" for the root
    depth: int
    count: float
    dist: np.ndarray
    question: int | None = None
    gain: float = 0.0
    yes: "Node | None" = None
    no: "Node | None" = None
    lam: float = LAMBDA_INIT
    bucket: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.question is None

    @property
    def counts(self) -> np.ndarray:
        return self.dist * self.count


@dataclass(eq=False)
class DecisionTree:
    root: Node
    n_futures: int
    smoothing_log: list = field(default_factory=list)

    # -- structure ----------------------------------------------------------

    def nodes(self) -> list[Node]:
        """Pre-order: node, yes subtree, no subtree."""
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            out.append(n)
            if not n.is_leaf:
                stack.append(n.no)
                stack.append(n.yes)
        return out

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes() if n.is_leaf]

    def depth(self) -> int:
        return max(n.depth for n in self.nodes())

    def renumber(self) -> None:
        for i, n in enumerate(self.nodes()):
            n.id = i
        for n in self.nodes():
            if not n.is_leaf:
                n.yes.parent = n.id
                n.no.parent = n.id

    def copy(self) -> "DecisionTree":
        return copy.deepcopy(self)

    def path(self, answers) -> list[Node]:
        """Root-to-leaf node list for a history.  ``answers[q]`` is truthy
        for yes; anything else (no, absent) goes down the no branch."""
        node = self.root
        out = [node]
        while not node.is_leaf:
            node = node.yes if answers[node.question] else node.no
            out.append(node)
        return out

    def leaf(self, answers) -> Node:
        return self.path(answers)[-1]

    def route(self, X: np.ndarray) -> np.ndarray:
        """Leaf id reached by every row of ``X``."""
        out = np.empty(X.shape[0], dtype=np.int64)
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if node.is_leaf or idx.size == 0:
                out[idx] = node.id
                continue
            ans = X[idx, node.question].astype(bool)
            stack.append((node.yes, idx[ans]))
            stack.append((node.no, idx[~ans]))
        return out

    def paths(self, X: np.ndarray) -> list[list[Node]]:
        by_id = {n.id: n for n in self.nodes()}
        parent = {n.id: n.parent for n in self.nodes()}
        out = []
        for leaf in self.route(X):
            chain = []
            nid = int(leaf)
            while nid >= 0:
                chain.append(by_id[nid])
                nid = parent[nid]
            out.append(chain[::-1])
        return out

    # -- probabilities ------------------------------------------------------

    def smoothed_dist(self, answers) -> np.ndarray:
        return smoothed_path_dist(self.path(answers), self.n_futures)

    def smoothed_prob(self, answers, future: int) -> float:
        return float(self.smoothed_dist(answers)[future])

    def raw_dist(self, answers) -> np.ndarray:
        """Unsmoothed distribution at the deepest node on the path with data."""
        for node in reversed(self.path(answers)):
            if node.count > 0:
                return node.dist.copy()
        return np.full(self.n_futures, 1.0 / self.n_futures)

    def refit(self, X: np.ndarray, y: np.ndarray, w: np.ndarray) -> None:
        """Recompute every node's weighted distribution from new events,
        keeping the structure.  Nodes no event reaches keep their old
        distribution but get zero count."""
        y = np.asarray(y, dtype=np.int64)
        w = np.asarray(w, dtype=float)
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            c = np.bincount(y[idx], weights=w[idx], minlength=self.n_futures)
            total = float(c.sum())
            node.count = total
            if total > 0:
                node.dist = c / total
            if not node.is_leaf:
                ans = X[idx, node.question].astype(bool)
                stack.append((node.yes, idx[ans]))
                stack.append((node.no, idx[~ans]))

    def set_leaf_distributions(self, leaf_counts: dict[int, np.ndarray]) -> None:
        """Replace leaf distributions with normalized counts and rebuild the
        internal nodes as the count-weighted sums of their leaves.  Leaves
        with zero total keep their previous distribution."""
        for node in reversed(self.nodes()):
            if node.is_leaf:
                c = leaf_counts.get(node.id)
                if c is not None and c.sum() > 0:
                    node.count = float(c.sum())
                    node.dist = c / c.sum()
                elif c is not None:
                    node.count = 0.0
            else:
                c = node.yes.counts + node.no.counts
                node.count = float(c.sum())
                if node.count > 0:
                    node.dist = c / node.count

    # -- serialization ------------------------------------------------------

    def dumps(self) -> str:
        lines = [f"# futures={self.n_futures}"]
        for n in self.nodes():
            q = "LEAF" if n.is_leaf else str(n.question)
            dist = ",".join(f"{k}:{v:.17g}" for k, v in enumerate(n.dist) if v != 0)
            lines.append(
                f"{n.id}\t{n.parent}\t{n.side}\t{q}\t{n.count:.17g}\t{n.lam:.17g}"
                f"\t{n.bucket}\t{n.gain:.17g}\t{{{dist}}}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "DecisionTree":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# futures="):
            raise TreeError("missing '# futures=' header")
        k = int(lines[0].split("=", 1)[1])
        nodes: dict[int, Node] = {}
        order = []
        for raw in lines[1:]:
            if not raw.strip():
                continue
            nid, parent, side, q, count, lam, bucket, gain, dist = raw.split("\t")
            d = np.zeros(k)
            body = dist.strip()[1:-1]
            if body:
                for part in body.split(","):
                    f, p = part.split(":")
                    d[int(f)] = float(p)
            node = Node(int(nid), int(parent), side, 0, float(count), d,
                        None if q == "LEAF" else int(q), float(gain),
                        lam=float(lam), bucket=int(bucket))
            nodes[node.id] = node
            order.append(node)
        root = None
        for node in order:
            if node.parent < 0:
                root = node
                continue
            par = nodes[node.parent]
            node.depth = par.depth + 1
            if node.side == "Y":
                par.yes = node
            else:
                par.no = node
        if root is None:
            raise TreeError("no root node")
        return cls(root, k)


def smoothed_path_dist(path: list[Node], n_futures: int) -> np.ndarray:
    """Interpolate down a root-to-leaf path; nodes with no data are skipped."""
    p = np.full(n_futures, 1.0 / n_futures)
    for node in path:
        if node.count > 0:
            p = node.lam * node.dist + (1.0 - node.lam) * p
    return p


# -- growing ------------------------------------------------------------------

def _entropy_counts(c: np.ndarray) -> float:
    t = c.sum()
    if t <= 0:
        return 0.0
    p = c[c > 0] / t
    return float(-(p * np.log2(p)).sum())


def grow(X, y, w=None, n_futures: int | None = None, questions=None,
         r_min: RMin | None = None, max_depth: int | None = None) -> DecisionTree:
    """Grow a tree by repeatedly asking the question with the lowest
    average conditional entropy of the future.

    Ties go to the lowest question index.  A question is never asked twice
    on one path.  Growth stops at pure nodes, when no questions remain, or
    when ``r_min`` says the best entropy reduction is too small.
    """
    X = np.asarray(X)
    if X.ndim != 2:
        raise TreeError("answer matrix must be two-dimensional")
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise TreeError("cannot grow a tree from no events")
    w = np.ones(y.size) if w is None else np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise TreeError("event weights must be nonnegative")
    k = int(n_futures if n_futures is not None else y.max() + 1)
    r_min = r_min or RMin.constant(0.0)
    qs = list(range(X.shape[1])) if questions is None else sorted(questions)
    Xb = np.ascontiguousarray(X.astype(np.bool_))

    counter = [0]

    def make(idx, parent, side, depth):
        c = np.bincount(y[idx], weights=w[idx], minlength=k).astype(float)
        total = float(c.sum())
        dist = c / total if total > 0 else np.full(k, 1.0 / k)
        node = Node(counter[0], parent, side, depth, total, dist)
        counter[0] += 1
        return node

    root = make(np.arange(y.size), -1, "-", 0)
    stack = [(root, np.arange(y.size), qs)]
    while stack:
        node, idx, avail = stack.pop()
        c = node.counts
        if node.count <= 0 or np.count_nonzero(c > 0) <= 1 or not avail:
            continue
        if max_depth is not None and node.depth >= max_depth:
            continue
        sub = Xb[np.ix_(idx, avail)]
        h, wy = _kernels.split_entropies(sub, y[idx], w[idx], k)
        h = np.round(h, _ROUND)
        if r_min.kind == "pure":
            ok = (wy > 0) & (wy < node.count)
            if not ok.any():
                continue
            h = np.where(ok, h, np.inf)
        j = int(np.argmin(h))
        reduction = max(0.0, _entropy_counts(c) - float(h[j]))
        if r_min.stops(reduction, node.count):
            continue
        q = avail[j]
        node.question = q
        node.gain = reduction
        ans = Xb[idx, q]
        rest = [a for a in avail if a != q]
        node.yes = make(idx[ans], node.id, "Y", node.depth + 1)
        node.no = make(idx[~ans], node.id, "N", node.depth + 1)
        # no subtree pushed first so the yes subtree is numbered first
        stack.append((node.no, idx[~ans], rest))
        stack.append((node.yes, idx[ans], rest))
    tree = DecisionTree(root, k)
    tree.renumber()
    return tree


def uniform_tree(n_futures: int) -> DecisionTree:
    """A one-leaf tree with no data: every future gets ``1/n_futures``."""
    return DecisionTree(Node(0, -1, "-", 0, 0.0, np.full(n_futures, 1.0 / n_futures)), n_futures)


# -- pruning ------------------------------------------------------------------

def _collapse(node: Node) -> None:
    node.question = None
    node.gain = 0.0
    node.yes = node.no = None


def prune_depth(tree: DecisionTree, max_depth: int) -> DecisionTree:
    """Turn every node at ``max_depth`` into a leaf carrying its subtree's
    aggregate distribution."""
    if max_depth < 0:
        raise TreeError("max_depth must be >= 0")
    out = tree.copy()
    for n in out.nodes():
        if n.depth >= max_depth and not n.is_leaf:
            _collapse(n)
    out.renumber()
    return out


def prune_significance(tree: DecisionTree, threshold: float) -> DecisionTree:
    """Bottom-up, collapse splits worth fewer than ``threshold`` bit-events
    (weight times entropy reduction) whose children are both leaves."""
    if threshold < 0:
        raise TreeError("threshold must be >= 0")
    out = tree.copy()

    def visit(node):
        if node.is_leaf:
            return
        visit(node.yes)
        visit(node.no)
        if node.yes.is_leaf and node.no.is_leaf and node.count * node.gain < threshold:
            _collapse(node)

    visit(out.root)
    out.renumber()
    return out


# -- smoothing ----------------------------------------------------------------

def make_buckets(counts, min_count: float = 100.0, merge_below: float = 50.0,
                 keys=None) -> list[list[int]]:
    """Group items (indices of ``counts``) into buckets of at least
    ``min_count`` total, filling greedily in ascending order of
    ``(counts, *keys)``.  A short final bucket under ``merge_below`` joins
    its predecessor.
    """
    counts = [float(c) for c in counts]
    if keys is None:
        keys = [()] * len(counts)
    order = sorted(range(len(counts)), key=lambda i: (counts[i], *keys[i], i))
    buckets: list[list[int]] = []
    cur: list[int] = []
    total = 0.0
    for i in order:
        cur.append(i)
        total += counts[i]
        if total >= min_count:
            buckets.append(cur)
            cur, total = [], 0.0
    if cur:
        if buckets and total < merge_below:
            buckets[-1].extend(cur)
        else:
            buckets.append(cur)
    return buckets


def _heldout_paths(tree: DecisionTree, X, y):
    """Leaf-to-root node ids (data nodes only) and matching probabilities."""
    paths = tree.paths(X)
    depth = max((len(p) for p in paths), default=1)
    E = len(paths)
    ids = np.full((E, depth), -1, dtype=np.int64)
    pv = np.zeros((E, depth))
    for e, path in enumerate(paths):
        col = 0
        for node in reversed(path):
            if node.count > 0:
                ids[e, col] = node.id
                pv[e, col] = node.dist[y[e]]
                col += 1
    return ids, pv


def fb_smooth(tree: DecisionTree, X, y, w=None, iterations: int = 20,
              bucket_min: float = 100.0, merge_below: float = 50.0) -> DecisionTree:
    """Fit the interpolation weights on held-out events by forward-backward.

    Weights are tied within buckets built from held-out visit counts.  The
    held-out log2-probability before the first and after every iteration is
    stored in ``smoothing_log`` of the returned tree; EM makes it
    non-decreasing.
    """
    out = tree.copy()
    X = np.asarray(X)
    y = np.asarray(y, dtype=np.int64)
    w = np.ones(y.size) if w is None else np.asarray(w, dtype=float)
    out.renumber()
    nodes = out.nodes()
    n_nodes = len(nodes)
    ids, pv = _heldout_paths(out, X, y)
    visits = np.bincount(ids[ids >= 0], weights=np.repeat(w, ids.shape[1])[ids.ravel() >= 0],
                         minlength=n_nodes)
    data_nodes = [n for n in nodes if n.count > 0]
    parent_count = {n.id: (nodes[n.parent].count if n.parent >= 0 else math.inf) for n in nodes}
    groups = make_buckets([visits[n.id] for n in data_nodes], bucket_min, merge_below,
                          keys=[(parent_count[n.id], n.depth) for n in data_nodes])
    bucket_of = np.full(n_nodes, -1, dtype=np.int64)
    for b, members in enumerate(groups):
        for m in members:
            bucket_of[data_nodes[m].id] = b
    for n in nodes:
        n.bucket = int(bucket_of[n.id])
    lam = np.array([n.lam for n in nodes], dtype=float)
    floor = 1.0 / out.n_futures
    log = []
    for _ in range(iterations):
        use, skip, ll, _ = _kernels.smooth_pass(ids, pv, lam, w, floor)
        log.append(ll)
        bu = np.bincount(bucket_of[bucket_of >= 0], weights=use[bucket_of >= 0],
                         minlength=len(groups))
        bs = np.bincount(bucket_of[bucket_of >= 0], weights=skip[bucket_of >= 0],
                         minlength=len(groups))
        denom = bu + bs
        new = np.where(denom > 0, bu / np.where(denom > 0, denom, 1.0), np.nan)
        for i in range(n_nodes):
            b = bucket_of[i]
            if b >= 0 and not np.isnan(new[b]):
                lam[i] = min(1.0, max(0.0, new[b]))
    if ids.shape[0]:
        log.append(_kernels.smooth_pass(ids, pv, lam, w, floor)[2])
    for n in nodes:
        n.lam = float(lam[n.id])
    out.smoothing_log = log
    return out


def heldout_logprob(tree: DecisionTree, X, y, w=None) -> float:
    y = np.asarray(y, dtype=np.int64)
    w = np.ones(y.size) if w is None else np.asarray(w, dtype=float)
    total = 0.0
    for e, path in enumerate(tree.paths(np.asarray(X))):
        p = smoothed_path_dist(path, tree.n_futures)[y[e]]
        if p <= 0:
            raise ZeroDivisionError("held-out event with zero smoothed probability")
        total += w[e] * math.log2(p)
    return total
