"""Independent reference implementations used to cross-check the package.

These are written from the definitions with plain Python (fractions, math,
explicit enumeration) and share no code with ``dtparse``.
"""

import itertools
import math
from collections import defaultdict
from fractions import Fraction


def entropy_bits(ps):
    return -sum(p * math.log2(p) for p in ps if p > 0)


def kl_bits(p, q):
    return sum(a * math.log2(a / b) for a, b in zip(p, q) if a > 0)


def cross_entropy_bits(p, q):
    return -sum(a * math.log2(b) for a, b in zip(p, q) if a > 0)


def mutual_information_bits(table):
    px = [sum(r) for r in table]
    py = [sum(c) for c in zip(*table)]
    return sum(v * math.log2(v / (px[i] * py[j]))
               for i, row in enumerate(table) for j, v in enumerate(row) if v > 0)


def binomial_lower_tail(k, n):
    """Exact P(Bin(n, 1/2) <= k) as a Fraction."""
    return Fraction(sum(math.comb(n, i) for i in range(k + 1)), 2 ** n)


def split_conditional_entropy(column, y, w):
    """Weighted average entropy of ``y`` on each side of a yes/no column."""
    sides = {True: defaultdict(float), False: defaultdict(float)}
    for a, t, wt in zip(column, y, w):
        sides[bool(a)][t] += wt
    total = sum(w)
    h = 0.0
    for c in sides.values():
        n = sum(c.values())
        if n > 0:
            h += n / total * entropy_bits([v / n for v in c.values()])
    return h


def dag_path_posteriors(n_states, edges, probs, source, sink):
    """Edge posteriors by enumerating every source-to-sink path."""
    out_edges = defaultdict(list)
    for i, (s, d) in enumerate(edges):
        out_edges[s].append((i, d))
    paths = []

    def walk(state, used, p):
        if state == sink:
            paths.append((used, p))
            return
        for i, d in out_edges[state]:
            walk(d, used + [i], p * probs[i])

    walk(source, [], 1.0)
    total = sum(p for _, p in paths)
    post = [0.0] * len(edges)
    for used, p in paths:
        for i in used:
            post[i] += p / total
    return total, post


def smoothed_logprob(path_dists, lams, future, n_futures):
    """log2 of the root-to-leaf interpolated probability of ``future``."""
    p = 1.0 / n_futures
    for dist, lam in zip(path_dists, lams):
        p = lam * dist[future] + (1 - lam) * p
    return math.log2(p)


def spans(tree):
    """Non-root constituent spans of a nested ``(label, children)`` tuple tree
    whose leaves are strings."""
    out = []

    def visit(node, start, top):
        if isinstance(node, str):
            return start + 1
        pos = start
        for ch in node[1]:
            pos = visit(ch, pos, False)
        if not top:
            out.append((start, pos))
        return pos

    visit(tree, 0, True)
    return out


def crossing_count(gold_spans, pred_spans):
    return sum(1 for a, b in pred_spans
               if any((a < c < b < d) or (c < a < d < b) for c, d in gold_spans))


def all_binary_answer_rows(n_questions):
    return [list(bits) for bits in itertools.product([0, 1], repeat=n_questions)]
