"""Forward-backward training over derivation lattices.

For a treebank tree, every window-legal derivation of that exact tree forms
a lattice of merged states.  The only hidden variable is the derivation
order, so forward-backward over the lattice turns each model decision into
a fractionally weighted event.  Those events grow, reestimate and (on held
out data) smooth the decision trees.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .features import TreeHeadTable, tree_unary_depth
from .models import MODEL_NAMES, ModelConfig, ModelSet, Sentence, build_grammar
from .parser import _gold_oracle, derivation_graph
from .sdt import (
    DecisionTree, RMin, fb_smooth, grow, prune_depth, prune_significance, smoothed_path_dist,
)
from .treebank import Tree, filter_training

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)


class TrainingError(RuntimeError):
    pass


@dataclass
class FBResult:
    log_alpha: np.ndarray
    log_beta: np.ndarray  # anchored at log_beta[sink] = 0
    posteriors: np.ndarray
    sink: int

    @property
    def log_total(self) -> float:
        """Natural-log probability of the tree (sum over derivations)."""
        return float(self.log_alpha[self.sink])

    @property
    def log_beta_anchored(self) -> np.ndarray:
        """Backward masses with ``beta(sink) = alpha(sink)``."""
        return self.log_beta + self.log_alpha[self.sink]


@dataclass
class Lattice:
    """A DAG of merged states: sources at index 0, states topologically
    numbered, edges sorted by source state.

    ``factors`` lists, per model decision, ``(edge, model, history row,
    future)``; the edge probability is the product of its factors.
    """

    n_states: int
    src: np.ndarray
    dst: np.ndarray
    sink: int
    logp: np.ndarray | None = None
    f_edge: np.ndarray | None = None
    f_model: np.ndarray | None = None
    f_hist: np.ndarray | None = None
    f_future: np.ndarray | None = None
    label: str = ""

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    def forward_backward(self, logp: np.ndarray | None = None) -> FBResult:
        lp = self.logp if logp is None else logp
        if lp is None:
            raise TrainingError("no edge probabilities")
        la, lb, post = _kernels.lattice_fb(self.n_states, self.src, self.dst,
                                           np.asarray(lp, dtype=float), self.sink)
        if not np.isfinite(la[self.sink]):
            raise TrainingError(f"lattice {self.label!r} has zero probability")
        return FBResult(la, lb, post, self.sink)

    def edge_logp(self, tables: list[np.ndarray], leaf_of: list[np.ndarray]) -> np.ndarray:
        """Edge log-probabilities from per-model leaf distribution tables."""
        lp = np.zeros(self.n_edges)
        for m, tab in enumerate(tables):
            sel = self.f_model == m
            if not sel.any():
                continue
            p = tab[leaf_of[m][self.f_hist[sel]], self.f_future[sel]]
            with np.errstate(divide="ignore"):
                np.add.at(lp, self.f_edge[sel], np.log(p))
        return lp


class HistoryTable:
    """Deduplicated history rows for one model."""

    def __init__(self, width: int):
        self.width = width
        self.index: dict[bytes, int] = {}
        self.rows: list[np.ndarray] = []

    def add(self, vec: np.ndarray) -> int:
        key = np.packbits(vec).tobytes()
        i = self.index.get(key)
        if i is None:
            i = len(self.rows)
            self.index[key] = i
            self.rows.append(vec)
        return i

    def matrix(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, self.width), dtype=bool)
        return np.vstack(self.rows)

    def __len__(self):
        return len(self.rows)


def build_lattice(tree: Tree, models: ModelSet, histories: dict[str, HistoryTable] | None = None,
                  max_states: int = 200_000) -> Lattice:
    """Lattice of all window-legal derivations of ``tree``.

    ``histories`` collects the history rows of every decision (one table per
    model) so that lattices of a corpus share them.
    """
    if tree.max_fanout() > models.config.max_children:
        raise TrainingError("tree exceeds the fan-out bound")
    sentence = Sentence.from_tree(models.grammar, tree)
    oracle = _gold_oracle(models, tree, sentence)
    states, edges, ex = derivation_graph(models, sentence, oracle, max_states=max_states)
    goals = [i for i, st in enumerate(states) if ex.is_goal(st)]
    if len(goals) != 1:
        raise TrainingError(f"expected one complete parse in the lattice, found {len(goals)}")
    if histories is None:
        histories = {m: HistoryTable(len(models.catalogs[m])) for m in MODEL_NAMES}
    model_id = {m: i for i, m in enumerate(MODEL_NAMES)}
    ctx_rows: dict = {}
    fe, fm, fh, ff = [], [], [], []
    src = np.empty(len(edges), dtype=np.int64)
    dst = np.empty(len(edges), dtype=np.int64)
    logp = np.empty(len(edges))
    for k, (s, d, tr) in enumerate(edges):
        src[k], dst[k], logp[k] = s, d, tr.logp
        for model, ctx, future in tr.decisions:
            key = (model, id(ctx.state), ctx.x, ctx.cands)
            h = ctx_rows.get(key)
            if h is None:
                vec = models.catalogs[model].vector(ctx, sentence.word_ids)
                h = histories[model].add(vec)
                ctx_rows[key] = h
            fe.append(k)
            fm.append(model_id[model])
            fh.append(h)
            ff.append(future)
    return Lattice(len(states), src, dst, goals[0], logp,
                   np.array(fe, dtype=np.int64), np.array(fm, dtype=np.int64),
                   np.array(fh, dtype=np.int64), np.array(ff, dtype=np.int64),
                   label=" ".join(tree.words()))


@dataclass
class EventSet:
    """Weighted events for one model: history rows, futures, weights."""

    X: np.ndarray
    y: np.ndarray
    w: np.ndarray

    def __len__(self):
        return int(self.y.size)


class Corpus:
    """Lattices of a set of trees sharing history tables."""

    def __init__(self, trees: Sequence[Tree], models: ModelSet, max_states: int = 200_000):
        self.histories = {m: HistoryTable(len(models.catalogs[m])) for m in MODEL_NAMES}
        self.lattices: list[Lattice] = []
        self.skipped: list[tuple[int, str]] = []
        for i, t in enumerate(trees):
            try:
                self.lattices.append(build_lattice(t, models, self.histories, max_states))
            except (TrainingError, OverflowError, ValueError) as exc:
                logger.warning("skipping sentence %d: %s", i, exc)
                self.skipped.append((i, str(exc)))
        self.H = {m: self.histories[m].matrix() for m in MODEL_NAMES}

    def __len__(self):
        return len(self.lattices)

    def leaf_tables(self, models: ModelSet, smoothed: bool):
        """Per model: leaf distribution table and each history's leaf row."""
        tables, leaf_of = [], []
        for m in MODEL_NAMES:
            tree = models.trees[m]
            nodes = tree.nodes()
            row = {n.id: r for r, n in enumerate(nodes)}
            if smoothed:
                by_id = {n.id: n for n in nodes}
                tab = np.empty((len(nodes), tree.n_futures))
                for n in nodes:
                    path = []
                    cur = n
                    while True:
                        path.append(cur)
                        if cur.parent < 0:
                            break
                        cur = by_id[cur.parent]
                    tab[row[n.id]] = smoothed_path_dist(path[::-1], tree.n_futures)
            else:
                tab = np.vstack([n.dist if n.count > 0 else np.full(tree.n_futures, 1.0 / tree.n_futures)
                                 for n in nodes])
            H = self.H[m]
            leaves = tree.route(H) if H.shape[0] else np.zeros(0, dtype=np.int64)
            tables.append(tab)
            leaf_of.append(np.array([row[int(i)] for i in leaves], dtype=np.int64))
        return tables, leaf_of

    def expectations(self, models: ModelSet, smoothed: bool):
        """One forward-backward pass.  Returns per-model event sets and the
        corpus log2-probability."""
        tables, leaf_of = self.leaf_tables(models, smoothed)
        acc = [dict() for _ in MODEL_NAMES]
        total = 0.0
        for lat in self.lattices:
            lp = lat.edge_logp(tables, leaf_of)
            fb = lat.forward_backward(lp)
            total += fb.log_total / LN2
            wts = fb.posteriors[lat.f_edge]
            for m, h, f, wt in zip(lat.f_model, lat.f_hist, lat.f_future, wts):
                if wt > 0:
                    d = acc[m]
                    key = (int(h), int(f))
                    d[key] = d.get(key, 0.0) + float(wt)
        events = {}
        for mi, m in enumerate(MODEL_NAMES):
            d = acc[mi]
            if d:
                keys = sorted(d)
                h = np.array([k[0] for k in keys], dtype=np.int64)
                y = np.array([k[1] for k in keys], dtype=np.int64)
                w = np.array([d[k] for k in keys])
                events[m] = EventSet(self.H[m][h], y, w)
            else:
                events[m] = EventSet(np.zeros((0, self.H[m].shape[1]), dtype=bool),
                                     np.zeros(0, dtype=np.int64), np.zeros(0))
        return events, total

    def log_probability(self, models: ModelSet, smoothed: bool) -> float:
        tables, leaf_of = self.leaf_tables(models, smoothed)
        return sum(lat.forward_backward(lat.edge_logp(tables, leaf_of)).log_total
                   for lat in self.lattices) / LN2


def reestimate(tree: DecisionTree, events: EventSet) -> DecisionTree:
    """Replace leaf distributions by normalized event weights; structure and
    the history-to-leaf mapping stay fixed."""
    out = tree.copy()
    counts: dict[int, np.ndarray] = {}
    if len(events):
        leaves = out.route(events.X)
        for leaf, f, wt in zip(leaves, events.y, events.w):
            c = counts.setdefault(int(leaf), np.zeros(out.n_futures))
            c[f] += wt
    out.set_leaf_distributions(counts)
    return out


# -- the full schedule ------------------------------------------------------------

@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    prune_depth: int = 10
    derivation_prune_depth: int = 20
    reestimate_iterations: int = 9
    smoothing_iterations: int = 20
    bucket_min: float = 100.0
    r_min: float = 0.0
    prune_bit_events: float = 0.0
    train_fraction: float = 1.0
    max_lattice_states: int = 200_000
    oov_rate: float = 0.05
    filter_min_len: int = 3
    filter_max_len: int = 30


@dataclass
class TrainingLog:
    lines: list[str] = field(default_factory=list)

    def add(self, stage: str, **values) -> None:
        parts = [stage] + [f"{k}={_fmt(v)}" for k, v in values.items()]
        line = " ".join(parts)
        logger.info(line)
        self.lines.append(line)

    def text(self) -> str:
        return "\n".join(self.lines) + ("\n" if self.lines else "")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _grow_all(events: dict[str, EventSet], models: ModelSet, r_min: RMin) -> dict[str, DecisionTree]:
    trees = {}
    for m in MODEL_NAMES:
        ev = events[m]
        k = models.n_futures[m]
        if len(ev) == 0 or ev.w.sum() <= 0:
            trees[m] = models.trees[m].copy()
            continue
        trees[m] = grow(ev.X, ev.y, ev.w, n_futures=k, r_min=r_min)
    return trees


def _entropy_line(log: TrainingLog, stage: str, iteration: int, logprob: float, weight: float):
    ent = -logprob / weight if weight > 0 else 0.0
    log.add(stage, iteration=iteration, logprob=logprob, entropy=ent, perplexity=2.0 ** ent)


def train_pipeline(corpus: Sequence[Tree], heldout: Sequence[Tree], config: TrainConfig | None = None,
                   tht: TreeHeadTable | None = None, apply_filter: bool = True):
    """Build a model set from a treebank.

    1. forward-backward with uniform models, grow M1;
    2. prune M1 to ``prune_depth`` giving M2;
    3. forward-backward with M2 (smoothed at the initial weights), grow M3;
    4. ``reestimate_iterations`` rounds of forward-backward reestimation of
       M3's leaves;
    then smooth every tree on held-out events for ``smoothing_iterations``.
    Returns ``(models, log)``.
    """
    cfg = config or TrainConfig()
    log = TrainingLog()
    train = list(corpus)
    if apply_filter:
        train = filter_training(train, cfg.filter_min_len, cfg.filter_max_len, cfg.model.max_children)
    if cfg.train_fraction < 1.0:
        train = train[: int(len(train) * cfg.train_fraction)]
    if not train:
        raise TrainingError("no training sentences left after filtering")
    held = list(heldout)
    grammar = build_grammar(train, tht, oov_rate=cfg.oov_rate)
    mcfg = ModelConfig(**cfg.model.to_dict())
    mcfg.max_unary_chain = max(mcfg.max_unary_chain, max(tree_unary_depth(t) for t in train))
    models = ModelSet(grammar, mcfg)
    log.add("data", train=len(train), heldout=len(held), words=len(grammar.words),
            tags=len(grammar.tags), labels=len(grammar.labels))

    lat = Corpus(train, models, cfg.max_lattice_states)
    if not len(lat):
        raise TrainingError("no training lattices could be built")
    log.add("lattices", built=len(lat), skipped=len(lat.skipped),
            edges=sum(x.n_edges for x in lat.lattices))
    n_words = sum(len(t.leaves()) for t in train)
    r_min = RMin.constant(cfg.r_min)

    # step 1: uniform models
    events, lp = lat.expectations(models, smoothed=True)
    _entropy_line(log, "m1", 0, lp, n_words)
    m1 = _grow_all(events, models, r_min)
    # step 2
    models.trees = {m: prune_depth(t, cfg.prune_depth) for m, t in m1.items()}
    # step 3
    events, lp = lat.expectations(models, smoothed=True)
    _entropy_line(log, "m2", 0, lp, n_words)
    m3 = _grow_all(events, models, r_min)
    if cfg.prune_bit_events > 0:
        m3 = {m: prune_significance(t, cfg.prune_bit_events) for m, t in m3.items()}
    models.trees = m3
    # step 4
    for it in range(cfg.reestimate_iterations):
        events, lp = lat.expectations(models, smoothed=False)
        _entropy_line(log, "reestimate", it, lp, n_words)
        models.trees = {m: reestimate(models.trees[m], events[m]) for m in MODEL_NAMES}
    lp = lat.log_probability(models, smoothed=False)
    _entropy_line(log, "reestimate", cfg.reestimate_iterations, lp, n_words)

    # smoothing on held-out data
    trees = dict(models.trees)
    trees["derivation"] = prune_depth(trees["derivation"], cfg.derivation_prune_depth)
    models.trees = trees
    held_lat = Corpus(held, models, cfg.max_lattice_states) if held else None
    if held_lat is not None and len(held_lat) and cfg.smoothing_iterations > 0:
        h_events, h_lp = held_lat.expectations(models, smoothed=True)
        held_words = sum(len(held[i].leaves()) for i in range(len(held))
                         if i not in {s for s, _ in held_lat.skipped})
        _entropy_line(log, "heldout", 0, h_lp, held_words)
        smoothed = {}
        for m in MODEL_NAMES:
            ev = h_events[m]
            tree = models.trees[m]
            if len(ev) == 0:
                smoothed[m] = tree
                continue
            smoothed[m] = fb_smooth(tree, ev.X, ev.y, ev.w, iterations=cfg.smoothing_iterations,
                                    bucket_min=cfg.bucket_min)
            total_w = float(ev.w.sum())
            for i, ll in enumerate(smoothed[m].smoothing_log):
                _entropy_line(log, f"smooth[{m}]", i, ll, total_w)
        models.trees = smoothed
    else:
        log.add("smooth", skipped="no held-out lattices")
    return models, log
