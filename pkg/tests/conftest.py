"""Shared fixtures and independent reference implementations.

The reference functions here are deliberately written as straight-line
loops, separate from the package's vectorized code paths, so the tests act
as genuine cross-checks rather than restating the implementation.
"""

import math

import numpy as np
import pytest

from gruclust.model import ModelConfig, init_params
from gruclust.numerics import Rng


@pytest.fixture
def rng():
    return Rng(12345)


def tiny_config(**overrides) -> ModelConfig:
    kw = dict(input_dim=2, seq_len=4, hidden_dim=3, embed_dim=3, heads=2,
              head_dim=2, mlp_hidden=3, dropout_rate=0.0)
    kw.update(overrides)
    return ModelConfig(**kw)


def random_model(seed: int, **overrides):
    cfg = tiny_config(**overrides)
    params = init_params(cfg, Rng(seed))
    return cfg, params


# ---------------------------------------------------------------------------
# straight-line reference forward pass (duplicate-implementation oracle)

def reference_forward(x, params, cfg):
    """Scalar-loop re-implementation of the eval-mode forward pass.

    Returns (x_hat, y_prob, embedding).  Works on a single (T, d) window.
    """
    T, d = x.shape
    dh = cfg.hidden_dim

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    def affine(vec, W, b):
        out = []
        for j in range(W.shape[1]):
            acc = b[j]
            for i in range(W.shape[0]):
                acc += vec[i] * W[i, j]
            out.append(acc)
        return out

    # encoder
    h = [0.0] * dh
    states = []
    for t in range(T):
        cat = h + list(x[t])
        z = [sig(v) for v in affine(cat, params.enc_Wz, params.enc_bz)]
        r = [sig(v) for v in affine(cat, params.enc_Wr, params.enc_br)]
        cat_h = [r[i] * h[i] for i in range(dh)] + list(x[t])
        cand = [math.tanh(v) for v in affine(cat_h, params.enc_Wh, params.enc_bh)]
        h = [(1 - z[i]) * h[i] + z[i] * cand[i] for i in range(dh)]
        states.append(h)

    # attention + pooling
    if cfg.attention_enabled:
        ctx_rows = [[] for _ in range(T)]
        for m in range(cfg.heads):
            q = [affine(states[t], params.att_Wq[m], [0.0] * cfg.head_dim) for t in range(T)]
            k = [affine(states[t], params.att_Wk[m], [0.0] * cfg.head_dim) for t in range(T)]
            v = [affine(states[t], params.att_Wv[m], [0.0] * cfg.head_dim) for t in range(T)]
            for i in range(T):
                scores = [
                    sum(q[i][a] * k[j][a] for a in range(cfg.head_dim)) / math.sqrt(cfg.head_dim)
                    for j in range(T)
                ]
                mx = max(scores)
                es = [math.exp(s - mx) for s in scores]
                tot = sum(es)
                w = [e / tot for e in es]
                att = [sum(w[j] * v[j][a] for j in range(T)) for a in range(cfg.head_dim)]
                ctx_rows[i].extend(att)
    else:
        ctx_rows = states
    pooled = [sum(row[a] for row in ctx_rows) / T for a in range(len(ctx_rows[0]))]
    emb = affine(pooled, params.pool_W, params.pool_b)

    # decoder
    s = affine(emb, params.dec_W0, params.dec_b0)
    x_hat = []
    for _ in range(T):
        cat = s + emb
        z = [sig(v) for v in affine(cat, params.dec_Wz, params.dec_bz)]
        r = [sig(v) for v in affine(cat, params.dec_Wr, params.dec_br)]
        cat_h = [r[i] * s[i] for i in range(dh)] + emb
        cand = [math.tanh(v) for v in affine(cat_h, params.dec_Wh, params.dec_bh)]
        s = [(1 - z[i]) * s[i] + z[i] * cand[i] for i in range(dh)]
        x_hat.append(affine(s, params.out_W, params.out_b))

    y_prob = None
    if cfg.outcome_head_enabled:
        a = [math.tanh(v) for v in affine(emb, params.mlp_W1, params.mlp_b1)]
        logit = params.mlp_b2[0] + sum(a[i] * params.mlp_W2[i, 0] for i in range(len(a)))
        y_prob = sig(logit)
    return np.array(x_hat), y_prob, np.array(emb)


# ---------------------------------------------------------------------------
# brute-force metric references

def brute_auc(labels, scores):
    pos = [s for l, s in zip(labels, scores) if l == 1]
    neg = [s for l, s in zip(labels, scores) if l == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def brute_silhouette(points, labels):
    points = np.asarray(points, dtype=float)
    n = len(points)
    vals = []
    for i in range(n):
        same = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not same:
            vals.append(0.0)
            continue
        a = np.mean([np.linalg.norm(points[i] - points[j]) for j in same])
        b = math.inf
        for c in set(labels) - {labels[i]}:
            other = [j for j in range(n) if labels[j] == c]
            b = min(b, np.mean([np.linalg.norm(points[i] - points[j]) for j in other]))
        vals.append((b - a) / max(a, b))
    return float(np.mean(vals))


def brute_davies_bouldin(points, labels):
    points = np.asarray(points, dtype=float)
    cs = sorted(set(labels))
    cents = {c: points[[j for j in range(len(points)) if labels[j] == c]].mean(axis=0) for c in cs}
    scat = {
        c: np.mean([np.linalg.norm(points[j] - cents[c])
                    for j in range(len(points)) if labels[j] == c])
        for c in cs
    }
    total = 0.0
    for i in cs:
        total += max(
            (scat[i] + scat[j]) / np.linalg.norm(cents[i] - cents[j])
            for j in cs if j != i
        )
    return total / len(cs)


def brute_ari(a, b):
    n = len(a)
    same_a = [[a[i] == a[j] for j in range(n)] for i in range(n)]
    same_b = [[b[i] == b[j] for j in range(n)] for i in range(n)]
    n11 = n00 = n10 = n01 = 0
    for i in range(n):
        for j in range(i + 1, n):
            if same_a[i][j] and same_b[i][j]:
                n11 += 1
            elif same_a[i][j] and not same_b[i][j]:
                n10 += 1
            elif not same_a[i][j] and same_b[i][j]:
                n01 += 1
            else:
                n00 += 1
    total = n11 + n10 + n01 + n00
    sum_a = n11 + n10
    sum_b = n11 + n01
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return (n11 - expected) / (max_index - expected)
