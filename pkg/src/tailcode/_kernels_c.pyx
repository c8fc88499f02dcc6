# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled boosting kernels.

Same contract as :mod:`tailcode._kernels_py`. Trees use a complete binary
layout: node ``j`` has children ``2j+1`` and ``2j+2``; ``feature[j] >= 0``
marks an internal node, ``-1`` a leaf and ``-2`` an unused slot.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p

cnp.import_array()

BACKEND = "cython"

cdef int MAX_HALVINGS = 10


cdef inline double _softplus(double m) noexcept nogil:
    if m > 0:
        return m + log1p(exp(-m))
    return log1p(exp(m))


cdef inline double _sigmoid(double m) noexcept nogil:
    cdef double e
    if m >= 0:
        return 1.0 / (1.0 + exp(-m))
    e = exp(m)
    return e / (1.0 + e)


cdef double _logloss(const double[::1] margin, const double[::1] y, Py_ssize_t n) noexcept nogil:
    cdef double total = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        total += _softplus(margin[i]) - y[i] * margin[i]
    return total / n


cdef inline double _midpoint(double a, double b) noexcept nogil:
    cdef double t = 0.5 * (a + b)
    if not (a <= t and t < b):
        t = a
    return t


def fit_trees(
    const double[:, ::1] xt,
    const Py_ssize_t[:, ::1] order,
    const double[::1] y,
    double base_margin,
    int num_rounds,
    int max_depth,
    double learning_rate,
    double l2_lambda,
    double min_child_hessian,
):
    """Grow ``num_rounds`` logistic-loss trees.

    ``xt`` is the feature matrix transposed (features x samples) and
    ``order[f]`` the stable ascending argsort of ``xt[f]``.
    Returns ``(feature, threshold, value, logloss)``.
    """
    cdef Py_ssize_t nf = xt.shape[0]
    cdef Py_ssize_t n = xt.shape[1]
    cdef Py_ssize_t m_nodes = (1 << (max_depth + 1)) - 1

    feature_arr = np.full((num_rounds, m_nodes), -2, dtype=np.int32)
    threshold_arr = np.zeros((num_rounds, m_nodes), dtype=np.float64)
    value_arr = np.zeros((num_rounds, m_nodes), dtype=np.float64)
    logloss_arr = np.zeros(num_rounds, dtype=np.float64)
    cdef int[:, ::1] feature = feature_arr
    cdef double[:, ::1] threshold = threshold_arr
    cdef double[:, ::1] value = value_arr
    cdef double[::1] logloss = logloss_arr

    cdef double[::1] margin = np.full(n, base_margin, dtype=np.float64)
    cdef double[::1] trial = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] gh = np.empty((n, 2), dtype=np.float64)
    # feature values in sorted order, contiguous per feature
    cdef double[:, ::1] vs = np.take_along_axis(np.asarray(xt), np.asarray(order), axis=1)
    cdef Py_ssize_t[::1] node_of = np.zeros(n, dtype=np.intp)

    cdef double[::1] G = np.zeros(m_nodes, dtype=np.float64)
    cdef double[::1] H = np.zeros(m_nodes, dtype=np.float64)
    cdef double[::1] parent_term = np.zeros(m_nodes, dtype=np.float64)
    cdef double[::1] acc_g = np.zeros(m_nodes, dtype=np.float64)
    cdef double[::1] acc_h = np.zeros(m_nodes, dtype=np.float64)
    cdef double[::1] last_v = np.zeros(m_nodes, dtype=np.float64)
    cdef double[::1] best_gain = np.zeros(m_nodes, dtype=np.float64)
    cdef double[::1] best_thr = np.zeros(m_nodes, dtype=np.float64)
    cdef int[::1] best_feat = np.zeros(m_nodes, dtype=np.int32)
    cdef char[::1] seen = np.zeros(m_nodes, dtype=np.int8)
    cdef char[::1] is_open = np.zeros(m_nodes, dtype=np.int8)

    cdef Py_ssize_t t, i, j, k, f, lo, hi, level
    cdef double p, v, gl, hl, gr, hr, gain, old_loss, new_loss, scale
    cdef int any_open, attempt

    with nogil:
        old_loss = _logloss(margin, y, n)
        for t in range(num_rounds):
            for i in range(n):
                p = _sigmoid(margin[i])
                gh[i, 0] = p - y[i]
                gh[i, 1] = p * (1.0 - p)
                node_of[i] = 0
            feature[t, 0] = -1

            for level in range(max_depth + 1):
                lo = (1 << level) - 1
                hi = (1 << (level + 1)) - 1
                any_open = 0
                for j in range(lo, hi):
                    G[j] = 0.0
                    H[j] = 0.0
                    is_open[j] = 0
                for i in range(n):
                    j = node_of[i]
                    if j >= lo:
                        G[j] += gh[i, 0]
                        H[j] += gh[i, 1]
                for j in range(lo, hi):
                    if feature[t, j] == -1:
                        value[t, j] = -G[j] / (H[j] + l2_lambda) * learning_rate if H[j] + l2_lambda > 0 else 0.0
                        if level < max_depth and H[j] >= 2.0 * min_child_hessian:
                            is_open[j] = 1
                            best_gain[j] = 0.0
                            best_feat[j] = -1
                            parent_term[j] = G[j] * G[j] / (H[j] + l2_lambda)
                            any_open = 1
                if not any_open:
                    break

                for f in range(nf):
                    for j in range(lo, hi):
                        acc_g[j] = 0.0
                        acc_h[j] = 0.0
                        seen[j] = 0
                    for k in range(n):
                        i = order[f, k]
                        j = node_of[i]
                        if j < lo or not is_open[j]:
                            continue
                        v = vs[f, k]
                        if seen[j] and v != last_v[j]:
                            gl = acc_g[j]
                            hl = acc_h[j]
                            gr = G[j] - gl
                            hr = H[j] - hl
                            if hl >= min_child_hessian and hr >= min_child_hessian and hl + l2_lambda > 0 and hr + l2_lambda > 0:
                                gain = 0.5 * ((gl * gl / (hl + l2_lambda) + gr * gr / (hr + l2_lambda)) - parent_term[j])
                                if gain > best_gain[j]:
                                    best_gain[j] = gain
                                    best_feat[j] = <int>f
                                    best_thr[j] = _midpoint(last_v[j], v)
                        acc_g[j] += gh[i, 0]
                        acc_h[j] += gh[i, 1]
                        last_v[j] = v
                        seen[j] = 1

                any_open = 0
                for j in range(lo, hi):
                    if is_open[j] and best_feat[j] >= 0:
                        feature[t, j] = best_feat[j]
                        threshold[t, j] = best_thr[j]
                        value[t, j] = 0.0
                        feature[t, 2 * j + 1] = -1
                        feature[t, 2 * j + 2] = -1
                        any_open = 1
                    else:
                        is_open[j] = 0
                if not any_open:
                    break
                for i in range(n):
                    j = node_of[i]
                    if j >= lo and is_open[j]:
                        if xt[best_feat[j], i] <= best_thr[j]:
                            node_of[i] = 2 * j + 1
                        else:
                            node_of[i] = 2 * j + 2

            # guard: a round never raises the training loss
            scale = 1.0
            for attempt in range(MAX_HALVINGS + 1):
                for i in range(n):
                    trial[i] = margin[i] + value[t, node_of[i]] * scale
                new_loss = _logloss(trial, y, n)
                if new_loss <= old_loss:
                    break
                scale = scale * 0.5
            if new_loss <= old_loss:
                if scale != 1.0:
                    for j in range(m_nodes):
                        if feature[t, j] == -1:
                            value[t, j] = value[t, j] * scale
                for i in range(n):
                    margin[i] = trial[i]
                old_loss = new_loss
            else:
                for j in range(m_nodes):
                    feature[t, j] = -2
                    threshold[t, j] = 0.0
                    value[t, j] = 0.0
                feature[t, 0] = -1
            logloss[t] = old_loss

    return feature_arr, threshold_arr, value_arr, logloss_arr


def predict_margin(
    const double[:, ::1] x,
    const int[:, ::1] feature,
    const double[:, ::1] threshold,
    const double[:, ::1] value,
    double base_margin,
):
    """Sum of leaf values over all trees, per row of ``x``."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nt = feature.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, t, j
    cdef double m
    with nogil:
        for i in range(n):
            m = base_margin
            for t in range(nt):
                j = 0
                while feature[t, j] >= 0:
                    if x[i, feature[t, j]] <= threshold[t, j]:
                        j = 2 * j + 1
                    else:
                        j = 2 * j + 2
                m += value[t, j]
            out[i] = m
    return out_arr
