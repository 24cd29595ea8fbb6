"""Entropy-family measures over discrete distributions (all in bits).

Distributions are accepted either as mappings ``outcome -> probability`` or
as plain sequences/arrays of probabilities.  Joint distributions are
mappings ``(x, y) -> probability`` or 2-D arrays indexed ``[x, y]``.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from typing import Any

import numpy as np

TOLERANCE = 1e-9


class DistributionError(ValueError):
    """Raised for negative or non-normalized probability tables."""


def _as_array(d: Any) -> np.ndarray:
    if isinstance(d, Mapping):
        values = list(d.values())
    else:
        values = d
    p = np.asarray(values, dtype=float).ravel()
    _check(p)
    return p


def _check(p: np.ndarray) -> None:
    if p.size == 0:
        raise DistributionError("empty distribution")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DistributionError("probabilities must be finite and nonnegative")
    if abs(p.sum() - 1.0) > TOLERANCE:
        raise DistributionError(f"probabilities sum to {p.sum()!r}, not 1")


def _plogp(p: np.ndarray) -> np.ndarray:
    # 0 log 0 is taken as 0 exactly
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log2(p[nz])
    return out


def entropy(d) -> float:
    """Shannon entropy ``-sum p log2 p``."""
    p = _as_array(d)
    return max(0.0, float(-_plogp(p).sum()))


def perplexity(d) -> float:
    """``2 ** entropy(d)``: the average effective number of choices."""
    return 2.0 ** entropy(d)


def cross_entropy(p, q) -> float:
    """``-sum p log2 q``; infinite when q vanishes on the support of p."""
    pa, qa = _aligned(p, q)
    nz = pa > 0
    if np.any(qa[nz] == 0):
        return math.inf
    return float(-(pa[nz] * np.log2(qa[nz])).sum())


def kl_divergence(p, q) -> float:
    """Relative entropy ``D(p || q)``.

    Raises ``DistributionError`` when ``q(x) = 0`` somewhere ``p(x) > 0``.
    """
    pa, qa = _aligned(p, q)
    nz = pa > 0
    if np.any(qa[nz] == 0):
        raise DistributionError("q must be positive wherever p is positive")
    return max(0.0, float((pa[nz] * np.log2(pa[nz] / qa[nz])).sum()))


def _aligned(p, q) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(p, Mapping) or isinstance(q, Mapping):
        if not (isinstance(p, Mapping) and isinstance(q, Mapping)):
            raise TypeError("p and q must both be mappings or both sequences")
        keys = list(dict.fromkeys([*p.keys(), *q.keys()]))
        pa = np.array([p.get(k, 0.0) for k in keys], dtype=float)
        qa = np.array([q.get(k, 0.0) for k in keys], dtype=float)
    else:
        pa = np.asarray(p, dtype=float).ravel()
        qa = np.asarray(q, dtype=float).ravel()
        if pa.shape != qa.shape:
            raise DistributionError("p and q have different supports")
    _check(pa)
    _check(qa)
    return pa, qa


def joint_table(j) -> np.ndarray:
    """Return a joint distribution as a validated 2-D array ``[x, y]``."""
    if isinstance(j, Mapping):
        xs = list(dict.fromkeys(k[0] for k in j))
        ys = list(dict.fromkeys(k[1] for k in j))
        xi = {x: i for i, x in enumerate(xs)}
        yi = {y: i for i, y in enumerate(ys)}
        table = np.zeros((len(xs), len(ys)))
        for (x, y), v in j.items():
            table[xi[x], yi[y]] += v
    else:
        table = np.array(j, dtype=float)
        if table.ndim != 2:
            raise DistributionError("joint distribution must be two-dimensional")
    _check(table.ravel())
    return table


def marginals(j) -> tuple[np.ndarray, np.ndarray]:
    table = joint_table(j)
    return table.sum(axis=1), table.sum(axis=0)


def joint_entropy(j) -> float:
    return entropy(joint_table(j).ravel())


def conditional_entropy(j) -> float:
    """``H(Y | X)`` for a joint indexed ``[x, y]``."""
    table = joint_table(j)
    px = table.sum(axis=1, keepdims=True)
    total = 0.0
    rows, cols = np.nonzero(table)
    for r, c in zip(rows, cols):
        pxy = table[r, c]
        total -= pxy * math.log2(pxy / px[r, 0])
    return max(0.0, total)


def mutual_information(j) -> float:
    """``D(p_XY || p_X p_Y)``."""
    table = joint_table(j)
    px = table.sum(axis=1)
    py = table.sum(axis=0)
    total = 0.0
    rows, cols = np.nonzero(table)
    for r, c in zip(rows, cols):
        pxy = table[r, c]
        total += pxy * math.log2(pxy / (px[r] * py[c]))
    return max(0.0, total)


def counts_entropy(counts) -> float:
    """Entropy of the relative frequencies of a (weighted) count vector."""
    c = np.asarray(counts, dtype=float)
    n = c.sum()
    if n <= 0:
        return 0.0
    return entropy(c / n)
