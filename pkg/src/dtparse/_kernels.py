"""Numeric inner loops, each in a pure-numpy and a numba-compiled version.

The compiled versions are used unless ``DTPARSE_DISABLE_NUMBA`` is set to a
true value (or numba is not importable).  Both versions are always importable
under ``<name>_numpy`` / ``<name>_numba`` so they can be compared.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

_flag = os.environ.get("DTPARSE_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = HAVE_NUMBA and _flag not in ("1", "true", "yes", "on")

LOG2 = np.log(2.0)


# -- split entropies for tree growing ----------------------------------------

def split_entropies_numpy(X, y, w, n_futures):
    """Weighted average conditional entropy (bits) of ``y`` given each column
    of the boolean question matrix ``X``.  Returns ``(h, yes_weight)``."""
    n, q = X.shape
    Y = np.zeros((n, n_futures))
    Y[np.arange(n), y] = w
    yes = X.T.astype(float) @ Y
    total = Y.sum(axis=0)
    no = np.maximum(total[None, :] - yes, 0.0)
    wy = yes.sum(axis=1)
    wn = no.sum(axis=1)
    h = _weighted_entropy_rows(yes, wy) + _weighted_entropy_rows(no, wn)
    wt = total.sum()
    return (h / wt if wt > 0 else h), wy


def _weighted_entropy_rows(c, rowsum):
    # returns rowsum * H(row) so the caller can average by total weight
    out = np.zeros(c.shape[0])
    for k in range(c.shape[1]):
        col = c[:, k]
        ok = (col > 0) & (rowsum > 0)
        out[ok] -= col[ok] * np.log2(col[ok] / rowsum[ok])
    return out


@njit(cache=True)
def split_entropies_numba(X, y, w, n_futures):
    n, q = X.shape
    total = np.zeros(n_futures)
    for e in range(n):
        total[y[e]] += w[e]
    wt = total.sum()
    h = np.zeros(q)
    wy_out = np.zeros(q)
    yes = np.zeros(n_futures)
    for j in range(q):
        yes[:] = 0.0
        for e in range(n):
            if X[e, j]:
                yes[y[e]] += w[e]
        wy = yes.sum()
        wn = wt - wy
        acc = 0.0
        for k in range(n_futures):
            c = yes[k]
            if c > 0 and wy > 0:
                acc -= c * np.log2(c / wy)
            c = total[k] - yes[k]
            if c > 0 and wn > 0:
                acc -= c * np.log2(c / wn)
        h[j] = acc / wt if wt > 0 else acc
        wy_out[j] = wy
    return h, wy_out


# -- merge losses for mutual-information clustering ---------------------------

def merge_losses_numpy(p):
    """``loss[i, j]`` (i < j) of average MI when classes i and j merge;
    ``inf`` elsewhere.  ``p`` is the class bigram joint distribution."""
    c = p.shape[0]
    pl = p.sum(axis=1)
    pr = p.sum(axis=0)
    q = _mi_terms(p, pl[:, None], pr[None, :])
    rq = q.sum(axis=1)
    cq = q.sum(axis=0)
    loss = np.full((c, c), np.inf)
    idx = np.arange(c)
    for i in range(c - 1):
        for j in range(i + 1, c):
            removed = rq[i] + rq[j] + cq[i] + cq[j] - q[i, i] - q[i, j] - q[j, i] - q[j, j]
            keep = (idx != i) & (idx != j)
            row = p[i, keep] + p[j, keep]
            col = p[keep, i] + p[keep, j]
            s = p[i, i] + p[i, j] + p[j, i] + p[j, j]
            pln = pl[i] + pl[j]
            prn = pr[i] + pr[j]
            added = (_mi_terms(row, pln, pr[keep]).sum()
                     + _mi_terms(col, pl[keep], prn).sum()
                     + _mi_terms(np.array([s]), pln, prn).sum())
            loss[i, j] = removed - added
    return loss


def _mi_terms(p, a, b):
    p = np.asarray(p, dtype=float)
    denom = np.broadcast_to(np.asarray(a, dtype=float) * np.asarray(b, dtype=float), p.shape)
    out = np.zeros(p.shape)
    nz = p > 0
    out[nz] = p[nz] * np.log2(p[nz] / denom[nz])
    return out


@njit(cache=True)
def _term(x, a, b):
    if x > 0:
        return x * np.log2(x / (a * b))
    return 0.0


@njit(cache=True)
def merge_losses_numba(p):
    c = p.shape[0]
    pl = p.sum(axis=1)
    pr = p.sum(axis=0)
    q = np.zeros((c, c))
    for a in range(c):
        for b in range(c):
            q[a, b] = _term(p[a, b], pl[a], pr[b])
    rq = q.sum(axis=1)
    cq = q.sum(axis=0)
    loss = np.full((c, c), np.inf)
    for i in range(c - 1):
        for j in range(i + 1, c):
            removed = rq[i] + rq[j] + cq[i] + cq[j] - q[i, i] - q[i, j] - q[j, i] - q[j, j]
            pln = pl[i] + pl[j]
            prn = pr[i] + pr[j]
            added = 0.0
            for k in range(c):
                if k == i or k == j:
                    continue
                added += _term(p[i, k] + p[j, k], pln, pr[k])
                added += _term(p[k, i] + p[k, j], pl[k], prn)
            added += _term(p[i, i] + p[i, j] + p[j, i] + p[j, j], pln, prn)
            loss[i, j] = removed - added
    return loss


def best_pair(loss, tol=1e-12):
    """Lowest ``(i, j)`` among pairs within ``tol`` of the minimum loss."""
    m = loss.min()
    i, j = np.argwhere(loss <= m + tol)[0]
    return int(i), int(j)


# -- one forward-backward pass over smoothing paths ----------------------------

def smooth_pass_numpy(paths, pvals, lam, weights, floor):
    """Expected use/pass counts for every node lambda.

    ``paths[e]`` lists node ids from the leaf up to the root, padded with -1;
    ``pvals[e, d]`` is that node's empirical probability of the event's
    future.  Returns ``(use, skip, loglik, probs)`` where ``use[n]`` is the
    posterior count of stopping at node ``n`` and ``skip[n]`` of backing off
    past it.
    """
    E, D = paths.shape
    valid = paths >= 0
    lam_path = np.where(valid, lam[np.where(valid, paths, 0)], 0.0)
    # beta[e, d] = smoothed prob at path position d (recursion from the root)
    beta = np.zeros((E, D + 1))
    beta[:, D] = floor
    for d in range(D - 1, -1, -1):
        b = lam_path[:, d] * pvals[:, d] + (1.0 - lam_path[:, d]) * beta[:, d + 1]
        beta[:, d] = np.where(valid[:, d], b, beta[:, d + 1])
    prob = beta[:, 0]
    if np.any(prob <= 0):
        raise ZeroDivisionError("held-out event with zero smoothed probability")
    alpha = np.ones((E, D))
    for d in range(1, D):
        step = np.where(valid[:, d - 1], 1.0 - lam_path[:, d - 1], 1.0)
        alpha[:, d] = alpha[:, d - 1] * step
    scale = (weights / prob)[:, None]
    use = alpha * lam_path * pvals * scale
    skip = alpha * (1.0 - lam_path) * beta[:, 1:] * scale
    n_nodes = lam.shape[0]
    flat = paths[valid]
    use_n = np.bincount(flat, weights=use[valid], minlength=n_nodes)
    skip_n = np.bincount(flat, weights=skip[valid], minlength=n_nodes)
    loglik = float((weights * np.log2(prob)).sum())
    return use_n, skip_n, loglik, prob


@njit(cache=True)
def smooth_pass_numba(paths, pvals, lam, weights, floor):
    E, D = paths.shape
    n_nodes = lam.shape[0]
    use_n = np.zeros(n_nodes)
    skip_n = np.zeros(n_nodes)
    probs = np.zeros(E)
    beta = np.zeros(D + 1)
    loglik = 0.0
    for e in range(E):
        beta[D] = floor
        for d in range(D - 1, -1, -1):
            n = paths[e, d]
            if n < 0:
                beta[d] = beta[d + 1]
            else:
                beta[d] = lam[n] * pvals[e, d] + (1.0 - lam[n]) * beta[d + 1]
        prob = beta[0]
        if prob <= 0:
            raise ZeroDivisionError("held-out event with zero smoothed probability")
        probs[e] = prob
        loglik += weights[e] * np.log2(prob)
        scale = weights[e] / prob
        alpha = 1.0
        for d in range(D):
            n = paths[e, d]
            if n < 0:
                continue
            use_n[n] += alpha * lam[n] * pvals[e, d] * scale
            skip_n[n] += alpha * (1.0 - lam[n]) * beta[d + 1] * scale
            alpha *= 1.0 - lam[n]
    return use_n, skip_n, loglik, probs


# -- forward-backward over a derivation lattice --------------------------------

def lattice_fb_numpy(n_states, src, dst, logp, sink):
    """Log forward/backward masses and edge posteriors.

    States are numbered topologically with the source at 0; edges are
    sorted by ``src``.  ``log_beta`` is anchored at ``log_beta[sink] = 0``.
    """
    log_alpha = np.full(n_states, -np.inf)
    log_alpha[0] = 0.0
    order_in = np.argsort(dst, kind="stable")
    dst_sorted = dst[order_in]
    starts = np.searchsorted(dst_sorted, np.arange(n_states + 1))
    for s in range(1, n_states):
        lo, hi = starts[s], starts[s + 1]
        if hi > lo:
            e = order_in[lo:hi]
            log_alpha[s] = np.logaddexp.reduce(log_alpha[src[e]] + logp[e])
    log_beta = np.full(n_states, -np.inf)
    log_beta[sink] = 0.0
    out_starts = np.searchsorted(src, np.arange(n_states + 1))
    for s in range(n_states - 1, -1, -1):
        if s == sink:
            continue
        lo, hi = out_starts[s], out_starts[s + 1]
        if hi > lo:
            log_beta[s] = np.logaddexp.reduce(log_beta[dst[lo:hi]] + logp[lo:hi])
    post = np.exp(log_alpha[src] + logp + log_beta[dst] - log_alpha[sink])
    return log_alpha, log_beta, post


@njit(cache=True)
def _lae(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


@njit(cache=True)
def lattice_fb_numba(n_states, src, dst, logp, sink):
    m = src.shape[0]
    log_alpha = np.full(n_states, -np.inf)
    log_alpha[0] = 0.0
    for k in range(m):
        log_alpha[dst[k]] = _lae(log_alpha[dst[k]], log_alpha[src[k]] + logp[k])
    log_beta = np.full(n_states, -np.inf)
    log_beta[sink] = 0.0
    for k in range(m - 1, -1, -1):
        s = src[k]
        if s == sink:
            continue
        log_beta[s] = _lae(log_beta[s], log_beta[dst[k]] + logp[k])
    post = np.empty(m)
    for k in range(m):
        post[k] = np.exp(log_alpha[src[k]] + logp[k] + log_beta[dst[k]] - log_alpha[sink])
    return log_alpha, log_beta, post


def _pick(name):
    return globals()[f"{name}_numba" if USE_NUMBA else f"{name}_numpy"]


split_entropies = _pick("split_entropies")
merge_losses = _pick("merge_losses")
smooth_pass = _pick("smooth_pass")
lattice_fb = _pick("lattice_fb")
