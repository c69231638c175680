"""Slow reference implementations used only to cross-check the kernels.

These loop over indices in float64 and share no code with ``kernels``.
"""
import math

import numpy as np


def conv2d(x, weight, bias, stride=1, padding=0):
    c_in, h, w = x.shape
    c_out, _, kh, kw = weight.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = float(bias[o])
                for c in range(c_in):
                    for a in range(kh):
                        for b in range(kw):
                            y = i * stride + a - padding
                            xx = j * stride + b - padding
                            if 0 <= y < h and 0 <= xx < w:
                                acc += float(x[c, y, xx]) * float(weight[o, c, a, b])
                out[o, i, j] = acc
    return out


def conv1d_over_queue(queue, weight, bias):
    c_out, c_in, length = weight.shape
    flat_q = [float(queue[l, c]) for c in range(c_in) for l in range(length)]
    out = np.zeros(c_out)
    for o in range(c_out):
        flat_w = [float(weight[o, c, l]) for c in range(c_in) for l in range(length)]
        out[o] = sum(a * b for a, b in zip(flat_w, flat_q)) + float(bias[o])
    return out


def depthwise_xcorr(search, template):
    c, hs, ws = search.shape
    _, ht, wt = template.shape
    out = np.zeros((c, hs - ht + 1, ws - wt + 1))
    for ch in range(c):
        for i in range(hs - ht + 1):
            for j in range(ws - wt + 1):
                acc = 0.0
                for a in range(ht):
                    for b in range(wt):
                        acc += float(search[ch, i + a, j + b]) * float(template[ch, a, b])
                out[ch, i, j] = acc
    return out


def global_avg_pool(x):
    c, h, w = x.shape
    return np.array([sum(float(v) for v in x[ch].ravel()) / (h * w) for ch in range(c)])


def softmax(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def layer_norm(x, gamma, beta, eps=1e-5):
    out = np.zeros(x.shape)
    for t, row in enumerate(x):
        vals = [float(v) for v in row]
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        for c, v in enumerate(vals):
            out[t, c] = (v - mean) / math.sqrt(var + eps) * float(gamma[c]) + float(beta[c])
    return out


def matmul(a, b):
    n, k = a.shape
    _, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = sum(float(a[i, p]) * float(b[p, j]) for p in range(k))
    return out


def multi_head_attention(query, key, value, params, num_heads):
    """Loops over heads one at a time, slicing each head's projection columns."""
    ci = query.shape[1]
    ch = ci // num_heads
    q_all = matmul(query, params.wq)
    k_all = matmul(key, params.wk)
    v_all = matmul(value, params.wv)
    heads = []
    for n in range(num_heads):
        cols = slice(n * ch, (n + 1) * ch)
        qn, kn, vn = q_all[:, cols], k_all[:, cols], v_all[:, cols]
        head = np.zeros((query.shape[0], ch))
        for i in range(query.shape[0]):
            logits = [sum(qn[i, d] * kn[j, d] for d in range(ch)) / math.sqrt(ch)
                      for j in range(key.shape[0])]
            p = softmax(logits)
            for d in range(ch):
                head[i, d] = sum(p[j] * vn[j, d] for j in range(key.shape[0]))
        heads.append(head)
    return matmul(np.concatenate(heads, axis=1), params.wo)


def affine(x, w, b):
    return matmul(x, w) + np.asarray(b, dtype=float)


def feed_forward(x, params):
    hidden = np.maximum(affine(x, params.w1, params.b1), 0.0)
    return affine(hidden, params.w2, params.b2)
