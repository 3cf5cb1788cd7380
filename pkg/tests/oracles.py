"""Straight-line reference implementations used as test oracles.

Everything in this file is deliberately written as plain loops over numpy
scalars, independent of the tensor engine under test.  Keep it dumb: the
value of these oracles is that they cannot share a bug with the vectorized
implementations they check.
"""

import numpy as np


def conv2d_loop(x, kernels):
    """Valid cross-correlation, stride 1, via a quadruple loop.

    x: (C, H, W), kernels: (O, C, kh, kw) -> (O, H-kh+1, W-kw+1)
    """
    c_in, h, w = x.shape
    n_out, c_k, kh, kw = kernels.shape
    assert c_in == c_k
    out = np.zeros((n_out, h - kh + 1, w - kw + 1))
    for t in range(n_out):
        for i in range(h - kh + 1):
            for j in range(w - kw + 1):
                acc = 0.0
                for c in range(c_in):
                    for a in range(kh):
                        for b in range(kw):
                            acc += kernels[t, c, a, b] * x[c, i + a, j + b]
                out[t, i, j] = acc
    return out


def band_edges(length, n_bands):
    """Contiguous near-equal bands over range(length): [edge[i], edge[i+1])."""
    return [(i * length) // n_bands for i in range(n_bands + 1)]


def dynamic_maxpool_loop(x, out_h, out_w, valid_h=None, valid_w=None):
    """Banded max-pool of a (H, W) map to (out_h, out_w), brute force."""
    h, w = x.shape
    vh = h if valid_h is None else valid_h
    vw = w if valid_w is None else valid_w
    rows = band_edges(vh, out_h)
    cols = band_edges(vw, out_w)
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            best = -np.inf
            for r in range(rows[i], rows[i + 1]):
                for c in range(cols[j], cols[j + 1]):
                    if x[r, c] > best:
                        best = x[r, c]
            out[i, j] = best
    return out


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def lstm_cell_loop(x, h_prev, c_prev, wx, wh, b, hidden):
    """One LSTM step with gate order i, f, o, g, written out coordinate-wise.

    x: (d_in,), h_prev/c_prev: (hidden,), wx: (d_in, 4*hidden),
    wh: (hidden, 4*hidden), b: (4*hidden,).
    """
    pre = np.zeros(4 * hidden)
    for k in range(4 * hidden):
        acc = b[k]
        for d in range(x.shape[0]):
            acc += x[d] * wx[d, k]
        for d in range(hidden):
            acc += h_prev[d] * wh[d, k]
        pre[k] = acc
    i = sigmoid(pre[0:hidden])
    f = sigmoid(pre[hidden:2 * hidden])
    o = sigmoid(pre[2 * hidden:3 * hidden])
    g = np.tanh(pre[3 * hidden:4 * hidden])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def bilstm_maxpool_encode_loop(embedded, fwd, bwd, hidden):
    """Hand-unrolled bidirectional LSTM encoder with max over timesteps.

    embedded: (T, d) rows; fwd/bwd: dicts with keys wx, wh, b.
    Returns the (2*hidden,) sequence vector.
    """
    t_len = embedded.shape[0]
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    fwd_states = []
    for t in range(t_len):
        h, c = lstm_cell_loop(embedded[t], h, c, fwd["wx"], fwd["wh"], fwd["b"], hidden)
        fwd_states.append(h)
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    bwd_states = [None] * t_len
    for t in range(t_len - 1, -1, -1):
        h, c = lstm_cell_loop(embedded[t], h, c, bwd["wx"], bwd["wh"], bwd["b"], hidden)
        bwd_states[t] = h
    stacked = np.stack([np.concatenate([fwd_states[t], bwd_states[t]]) for t in range(t_len)])
    out = np.zeros(2 * hidden)
    for d in range(2 * hidden):
        best = stacked[0, d]
        for t in range(1, t_len):
            if stacked[t, d] > best:
                best = stacked[t, d]
        out[d] = best
    return out


def cosine_loop(x, y):
    dot = 0.0
    nx = 0.0
    ny = 0.0
    for a, b in zip(x, y):
        dot += a * b
        nx += a * a
        ny += b * b
    if nx == 0.0 or ny == 0.0:
        return 0.0
    val = dot / (np.sqrt(nx) * np.sqrt(ny))
    return min(1.0, max(-1.0, val))


def interaction_channels_loop(rows_a, rows_b, ids_a, ids_b):
    """Entrywise cosine and token-identity matrices for two token sequences."""
    la, lb = len(ids_a), len(ids_b)
    cos = np.zeros((la, lb))
    ind = np.zeros((la, lb))
    for i in range(la):
        for j in range(lb):
            cos[i, j] = cosine_loop(rows_a[i], rows_b[j])
            ind[i, j] = 1.0 if ids_a[i] == ids_b[j] else 0.0
    return cos, ind


def qq_forward_loop(cos, ind, len_a, len_b, params, max_len, pool):
    """Straight-line interaction-CNN score composed from the loop oracles.

    cos/ind: (max_len, max_len) channel matrices with zeros past the true
    lengths.  params: dict with kernels (n,2,s,s), bias (n,), w1, b1, w2, b2.
    """
    kernels = params["kernels"]
    n, _, s, _ = kernels.shape
    stacked = np.stack([cos, ind])
    feat = conv2d_loop(stacked, kernels)
    feat = feat + params["bias"][:, None, None]
    feat = np.maximum(feat, 0.0)
    ea = max(min(len_a, max_len) - s + 1, pool)
    eb = max(min(len_b, max_len) - s + 1, pool)
    pooled = np.stack([dynamic_maxpool_loop(feat[t], pool, pool, ea, eb) for t in range(n)])
    v = pooled.reshape(-1)
    hidden = np.maximum(params["w1"] @ v + params["b1"], 0.0)
    logit = params["w2"] @ hidden + params["b2"]
    return float(sigmoid(logit[0]))


def hinge_loss_loop(f_pos, f_negs, margin):
    total = 0.0
    for f_neg in f_negs:
        total += max(0.0, margin - f_pos + f_neg)
    return total / len(f_negs)


def sort_and_vote_loop(entries, k):
    """Brute-force score-sort-vote.

    entries: list of (question_index, relation_id, s1, s2, f).  Sort by f
    descending with ties by s1 descending then question index ascending;
    majority relation among the top k, ties by highest mean f then lowest
    relation id.
    """
    ranked = sorted(entries, key=lambda e: (-e[4], -e[2], e[0]))
    top = ranked[:min(k, len(ranked))]
    counts = {}
    f_sums = {}
    for _, rel, _, _, f in top:
        counts[rel] = counts.get(rel, 0) + 1
        f_sums[rel] = f_sums.get(rel, 0.0) + f
    best_count = max(counts.values())
    tied = [rel for rel, n in counts.items() if n == best_count]
    if len(tied) == 1:
        return tied[0]
    best_mean = max(f_sums[rel] / counts[rel] for rel in tied)
    tied = [rel for rel in tied if f_sums[rel] / counts[rel] == best_mean]
    return min(tied)


def adagrad_trace(p0, grads, lr, eps=1e-8):
    """Parameter values after applying the accumulator update rule step by step."""
    p = float(p0)
    acc = 0.0
    trace = []
    for g in grads:
        acc += g * g
        p -= lr * g / (np.sqrt(acc) + eps)
        trace.append(p)
    return trace
