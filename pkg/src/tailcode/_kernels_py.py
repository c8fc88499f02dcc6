"""Pure-numpy boosting kernels.

Mirrors ``tailcode._kernels_c`` operation for operation: node sums and
left-side running sums are sequential (``np.cumsum``), gains use the same
association order, ties keep the first (lowest feature, lowest threshold)
candidate. Only ``exp``/``log1p`` may differ in the last ulp from libm.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"
MAX_HALVINGS = 10


def _softplus(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    pos = m > 0
    out[pos] = m[pos] + np.log1p(np.exp(-m[pos]))
    out[~pos] = np.log1p(np.exp(m[~pos]))
    return out


def _sigmoid(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _seqsum(a: np.ndarray) -> float:
    return float(np.cumsum(a)[-1]) if a.size else 0.0


def _logloss(margin: np.ndarray, y: np.ndarray) -> float:
    return _seqsum(_softplus(margin) - y * margin) / margin.size


def _midpoint(a: float, b: float) -> float:
    t = 0.5 * (a + b)
    if not (a <= t < b):
        t = a
    return t


def fit_trees(xt, order, y, base_margin, num_rounds, max_depth,
              learning_rate, l2_lambda, min_child_hessian):
    xt = np.asarray(xt, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nf, n = xt.shape
    m_nodes = (1 << (max_depth + 1)) - 1

    feature = np.full((num_rounds, m_nodes), -2, dtype=np.int32)
    threshold = np.zeros((num_rounds, m_nodes))
    value = np.zeros((num_rounds, m_nodes))
    logloss = np.zeros(num_rounds)
    margin = np.full(n, base_margin, dtype=np.float64)
    old_loss = _logloss(margin, y)

    for t in range(num_rounds):
        p = _sigmoid(margin)
        g = p - y
        h = p * (1.0 - p)
        node_of = np.zeros(n, dtype=np.intp)
        feature[t, 0] = -1

        for level in range(max_depth + 1):
            lo, hi = (1 << level) - 1, (1 << (level + 1)) - 1
            G, H, open_nodes = {}, {}, []
            for j in range(lo, hi):
                if feature[t, j] != -1:
                    continue
                rows = np.flatnonzero(node_of == j)
                G[j], H[j] = _seqsum(g[rows]), _seqsum(h[rows])
                denom = H[j] + l2_lambda
                value[t, j] = -G[j] / denom * learning_rate if denom > 0 else 0.0
                if level < max_depth and H[j] >= 2.0 * min_child_hessian:
                    open_nodes.append(j)
            if not open_nodes:
                break

            best = {j: (0.0, -1, 0.0) for j in open_nodes}
            for f in range(nf):
                srt = order[f]
                nid = node_of[srt]
                for j in open_nodes:
                    r = srt[nid == j]
                    if r.size < 2:
                        continue
                    v = xt[f, r]
                    cg = np.cumsum(g[r])[:-1]
                    ch = np.cumsum(h[r])[:-1]
                    cut = np.flatnonzero(v[1:] != v[:-1])
                    gl, hl = cg[cut], ch[cut]
                    gr, hr = G[j] - gl, H[j] - hl
                    ok = ((hl >= min_child_hessian) & (hr >= min_child_hessian)
                          & (hl + l2_lambda > 0) & (hr + l2_lambda > 0))
                    if not ok.any():
                        continue
                    cut, gl, hl, gr, hr = cut[ok], gl[ok], hl[ok], gr[ok], hr[ok]
                    parent = G[j] * G[j] / (H[j] + l2_lambda)
                    gain = 0.5 * ((gl * gl / (hl + l2_lambda) + gr * gr / (hr + l2_lambda)) - parent)
                    k = int(np.argmax(gain))
                    if gain[k] > best[j][0]:
                        c = cut[k]
                        best[j] = (float(gain[k]), f, _midpoint(float(v[c]), float(v[c + 1])))

            split = [j for j in open_nodes if best[j][1] >= 0]
            if not split:
                break
            for j in split:
                _, f, thr = best[j]
                feature[t, j] = f
                threshold[t, j] = thr
                value[t, j] = 0.0
                feature[t, 2 * j + 1] = -1
                feature[t, 2 * j + 2] = -1
                rows = np.flatnonzero(node_of == j)
                left = xt[f, rows] <= thr
                node_of[rows[left]] = 2 * j + 1
                node_of[rows[~left]] = 2 * j + 2

        step = value[t, node_of]
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = margin + step * scale
            new_loss = _logloss(trial, y)
            if new_loss <= old_loss:
                break
            scale *= 0.5
        if new_loss <= old_loss:
            if scale != 1.0:
                leaves = feature[t] == -1
                value[t, leaves] = value[t, leaves] * scale
            margin = trial
            old_loss = new_loss
        else:
            feature[t] = -2
            threshold[t] = 0.0
            value[t] = 0.0
            feature[t, 0] = -1
        logloss[t] = old_loss

    return feature, threshold, value, logloss


def predict_margin(x, feature, threshold, value, base_margin):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.full(n, base_margin, dtype=np.float64)
    rows = np.arange(n)
    for t in range(feature.shape[0]):
        node = np.zeros(n, dtype=np.intp)
        while True:
            f = feature[t, node]
            inner = f >= 0
            if not inner.any():
                break
            idx = np.flatnonzero(inner)
            go_left = x[rows[idx], f[idx]] <= threshold[t, node[idx]]
            node[idx] = np.where(go_left, 2 * node[idx] + 1, 2 * node[idx] + 2)
        out += value[t, node]
    return out
