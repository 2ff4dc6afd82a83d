# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tree kernels. Same contracts as ``_pykernels``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def accumulate(X, const cnp.intp_t[::1] feature, const double[::1] threshold,
               const cnp.intp_t[::1] left, const cnp.intp_t[::1] right,
               const double[:, ::1] values, roots):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0]
    cdef Py_ssize_t k_out = values.shape[1]
    out = np.zeros((n, k_out), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef const cnp.intp_t[::1] rv = np.ascontiguousarray(roots, dtype=np.intp)
    cdef Py_ssize_t n_roots = rv.shape[0]
    cdef Py_ssize_t i, r, k
    cdef cnp.intp_t node, f
    with nogil:
        for i in range(n):
            for r in range(n_roots):
                node = rv[r]
                f = feature[node]
                while f >= 0:
                    if Xv[i, f] <= threshold[node]:
                        node = left[node]
                    else:
                        node = right[node]
                    f = feature[node]
                for k in range(k_out):
                    o[i, k] += values[node, k]
    return out


cdef inline double _midpoint(double lo, double hi) nogil:
    cdef double thr = (lo + hi) / 2.0
    if thr >= hi:
        return lo
    return thr


def best_split_gini(X, const cnp.intp_t[::1] y, idx, features, Py_ssize_t n_classes,
                    Py_ssize_t min_leaf):
    cdef const double[:, ::1] Xv = X
    cdef const cnp.intp_t[::1] iv = np.ascontiguousarray(idx, dtype=np.intp)
    cdef Py_ssize_t m = iv.shape[0]
    cdef int best_f = -1
    cdef double best_thr = 0.0
    cdef double best_gain = -np.inf
    if m < 2 * min_leaf:
        return best_f, best_thr, best_gain
    cdef double[::1] counts = np.zeros(n_classes, dtype=np.float64)
    cdef double[::1] cl = np.zeros(n_classes, dtype=np.float64)
    cdef double[::1] xs = np.empty(m, dtype=np.float64)
    cdef cnp.intp_t[::1] ys = np.empty(m, dtype=np.intp)
    cdef cnp.intp_t[::1] order
    cdef Py_ssize_t p, k, j
    cdef double parent = 0.0, sl, sr, cr, gain, nl, nr
    cdef cnp.intp_t f
    for p in range(m):
        counts[y[iv[p]]] += 1.0
    for k in range(n_classes):
        parent += counts[k] * counts[k]
    parent /= m
    for fo in features:
        f = fo
        col = np.asarray(Xv[:, f])[np.asarray(iv)]
        order = np.argsort(col, kind="stable")
        with nogil:
            for p in range(m):
                j = order[p]
                xs[p] = Xv[iv[j], f]
                ys[p] = y[iv[j]]
            for k in range(n_classes):
                cl[k] = 0.0
            for p in range(m - 1):
                cl[ys[p]] += 1.0
                if xs[p] >= xs[p + 1]:
                    continue
                nl = p + 1
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                sl = 0.0
                sr = 0.0
                for k in range(n_classes):
                    sl += cl[k] * cl[k]
                    cr = counts[k] - cl[k]
                    sr += cr * cr
                gain = (sl / nl + sr / nr - parent) / m
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_thr = _midpoint(xs[p], xs[p + 1])
    return best_f, best_thr, best_gain


def best_split_second_order(X, const double[::1] g, const double[::1] h, idx, features,
                            double lam, double gamma, Py_ssize_t min_leaf,
                            double min_child_weight):
    cdef const double[:, ::1] Xv = X
    cdef const cnp.intp_t[::1] iv = np.ascontiguousarray(idx, dtype=np.intp)
    cdef Py_ssize_t m = iv.shape[0]
    cdef int best_f = -1
    cdef double best_thr = 0.0
    cdef double best_gain = 0.0
    if m < 2 * min_leaf:
        return best_f, best_thr, best_gain
    cdef double[::1] xs = np.empty(m, dtype=np.float64)
    cdef double[::1] cg = np.empty(m, dtype=np.float64)
    cdef double[::1] ch = np.empty(m, dtype=np.float64)
    cdef cnp.intp_t[::1] order
    cdef Py_ssize_t p, j
    cdef double G, H, gl, hl, gr, hr, parent, gain, dl, dr, dp
    cdef cnp.intp_t f
    for fo in features:
        f = fo
        col = np.asarray(Xv[:, f])[np.asarray(iv)]
        order = np.argsort(col, kind="stable")
        with nogil:
            gl = 0.0
            hl = 0.0
            for p in range(m):
                j = iv[order[p]]
                xs[p] = Xv[j, f]
                gl = gl + g[j]
                hl = hl + h[j]
                cg[p] = gl
                ch[p] = hl
            G = cg[m - 1]
            H = ch[m - 1]
            dp = H + lam
            if dp < 1e-12:
                dp = 1e-12
            parent = G * G / dp
            for p in range(m - 1):
                if xs[p] >= xs[p + 1]:
                    continue
                if p + 1 < min_leaf or m - p - 1 < min_leaf:
                    continue
                gl = cg[p]
                hl = ch[p]
                gr = G - gl
                hr = H - hl
                if hl < min_child_weight or hr < min_child_weight:
                    continue
                dl = hl + lam
                if dl < 1e-12:
                    dl = 1e-12
                dr = hr + lam
                if dr < 1e-12:
                    dr = 1e-12
                gain = 0.5 * (gl * gl / dl + gr * gr / dr - parent) - gamma
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_thr = _midpoint(xs[p], xs[p + 1])
    return best_f, best_thr, best_gain
