import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from dtparse.models import MODEL_NAMES, ModelSet, build_grammar  # noqa: E402
from dtparse.sdt import grow  # noqa: E402
from dtparse.treebank import parse_bracketed  # noqa: E402

TOY_TREEBANK = [
    "[V [N dogs_NN1 N] bark_VVZ V]",
    "[V [N the_AT dog_NN1 N] barks_VVZ V]",
    "[V [N the_AT cat_NN1 N] sees_VVZ [N dogs_NN1 N] V]",
    "[N the_AT dog_NN1 N]",
    "[V bark_VVZ V]",
]


def toy_trees():
    return [parse_bracketed(s) for s in TOY_TREEBANK]


def toy_grammar():
    return build_grammar(toy_trees(), oov_rate=0.0)


def random_models(grammar, config=None, seed=0, depth=3, events=400):
    """A model set whose trees route real histories to random leaves."""
    ms = ModelSet(grammar, config)
    rng = np.random.default_rng(seed)
    for m in MODEL_NAMES:
        q, k = len(ms.catalogs[m]), ms.n_futures[m]
        X = rng.random((events, q)) < 0.5
        y = rng.integers(0, k, events)
        tree = grow(X, y, n_futures=k, max_depth=depth)
        for n in tree.nodes():
            n.lam = float(rng.uniform(0.2, 0.9))
        ms.trees[m] = tree
    return ms


@pytest.fixture(scope="session")
def grammar():
    return toy_grammar()


@pytest.fixture(scope="session")
def models(grammar):
    return random_models(grammar)


@pytest.fixture(scope="session")
def trained():
    """Models trained briefly on the synthetic treebank."""
    from synthetic import treebank
    from dtparse.training import TrainConfig, train_pipeline
    ms, _ = train_pipeline(treebank(40, 1), treebank(20, 2),
                           TrainConfig(reestimate_iterations=3, smoothing_iterations=5))
    return ms


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    from test_acceptance import TITLES
    outcome: dict = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid:
                continue
            if getattr(rep, "when", "call") != "call" and status == "passed":
                continue
            n = int(nodeid.split("test_criterion_")[1][:2])
            ok = status == "passed"
            outcome[n] = outcome.get(n, True) and ok
    if not outcome:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(outcome):
        terminalreporter.write_line(f"criterion {n:2d} {TITLES[n]:<28} {'PASS' if outcome[n] else 'FAIL'}")
