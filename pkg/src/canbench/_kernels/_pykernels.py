"""Pure NumPy implementation of the tree kernels.

Mirrors ``_ckernels.pyx`` operation for operation so both backends produce
the same trees and the same predictions.
"""

import numpy as np


def accumulate(X, feature, threshold, left, right, values, roots):
    """Sum the leaf rows reached by every sample in every tree.

    ``feature[node] < 0`` marks a leaf. Trees are summed in ``roots`` order.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    out = np.zeros((n, values.shape[1]), dtype=np.float64)
    if n == 0:
        return out
    for root in roots:
        node = np.full(n, root, dtype=np.intp)
        active = np.nonzero(feature[node] >= 0)[0]
        while active.size:
            nd = node[active]
            go_left = X[active, feature[nd]] <= threshold[nd]
            node[active] = np.where(go_left, left[nd], right[nd])
            active = active[feature[node[active]] >= 0]
        out += values[node]
    return out


def _midpoints(xs, pos):
    lo = xs[pos]
    hi = xs[pos + 1]
    thr = (lo + hi) / 2.0
    return np.where(thr >= hi, lo, thr)


def best_split_gini(X, y, idx, features, n_classes, min_leaf):
    """Best axis split of ``idx`` by Gini impurity decrease.

    Returns ``(feature, threshold, gain)``; feature is -1 when no valid
    split exists. Zero-gain splits are still returned (the caller decides).
    """
    m = idx.shape[0]
    best = (-1, 0.0, -np.inf)
    if m < 2 * min_leaf:
        return best
    yk = y[idx]
    counts = np.bincount(yk, minlength=n_classes).astype(np.float64)
    parent = float(np.dot(counts, counts)) / m
    onehot = np.zeros((m, n_classes), dtype=np.float64)
    onehot[np.arange(m), yk] = 1.0
    n_left = np.arange(1, m, dtype=np.float64)
    n_right = m - n_left
    for f in features:
        xs_all = X[idx, f]
        order = np.argsort(xs_all, kind="stable")
        xs = xs_all[order]
        cl = np.cumsum(onehot[order], axis=0)[:-1]
        cr = counts - cl
        score = (cl * cl).sum(axis=1) / n_left + (cr * cr).sum(axis=1) / n_right
        valid = xs[:-1] < xs[1:]
        valid &= (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        pos = np.nonzero(valid)[0]
        gains = (score[pos] - parent) / m
        j = int(np.argmax(gains))
        if gains[j] > best[2]:
            best = (int(f), float(_midpoints(xs, pos[j:j + 1])[0]), float(gains[j]))
    return best


def best_split_second_order(X, g, h, idx, features, lam, gamma, min_leaf,
                            min_child_weight):
    """Best split by the regularized second-order gain.

    gain = 0.5 * (GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam)) - gamma.
    Returns ``(feature, threshold, gain)``; feature is -1 when no split has
    positive gain.
    """
    m = idx.shape[0]
    best = (-1, 0.0, 0.0)
    if m < 2 * min_leaf:
        return best
    n_left = np.arange(1, m)
    n_right = m - n_left
    for f in features:
        xs_all = X[idx, f]
        order = np.argsort(xs_all, kind="stable")
        xs = xs_all[order]
        cg = np.cumsum(g[idx][order])
        ch = np.cumsum(h[idx][order])
        G = cg[-1]
        H = ch[-1]
        gl = cg[:-1]
        hl = ch[:-1]
        gr = G - gl
        hr = H - hl
        parent = G * G / max(H + lam, 1e-12)
        gains = 0.5 * (gl * gl / np.maximum(hl + lam, 1e-12)
                       + gr * gr / np.maximum(hr + lam, 1e-12) - parent) - gamma
        valid = xs[:-1] < xs[1:]
        valid &= (n_left >= min_leaf) & (n_right >= min_leaf)
        valid &= (hl >= min_child_weight) & (hr >= min_child_weight)
        if not valid.any():
            continue
        pos = np.nonzero(valid)[0]
        j = int(np.argmax(gains[pos]))
        if gains[pos[j]] > best[2]:
            best = (int(f), float(_midpoints(xs, pos[j:j + 1])[0]), float(gains[pos[j]]))
    return best
