"""GRU encoder with two-head temporal attention, GRU decoder, and a small
outcome MLP, with analytic backward passes for both task losses.

Layout conventions: a batch of windows is a (B, T, d) float64 array; all
weight matrices are stored (in_dim, out_dim) so layers compute ``x @ W + b``
on row batches.  The gate maps act on the concatenation [state, input] in
that order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numpy as np

from .numerics import Rng, sigmoid, softmax
from .serialize import load_arrays, save_arrays

CHECKPOINT_FORMAT = "model-checkpoint-v1"


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 6
    seq_len: int = 28
    hidden_dim: int = 32
    embed_dim: int = 32
    heads: int = 2
    head_dim: int = 16
    mlp_hidden: int = 16
    attention_enabled: bool = True
    outcome_head_enabled: bool = True
    dropout_rate: float = 0.3

    def __post_init__(self):
        if min(self.input_dim, self.seq_len, self.hidden_dim, self.embed_dim) < 1:
            raise ValueError("model dimensions must be >= 1")
        if self.attention_enabled and min(self.heads, self.head_dim) < 1:
            raise ValueError("heads and head_dim must be >= 1")
        if self.outcome_head_enabled and self.mlp_hidden < 1:
            raise ValueError("mlp_hidden must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def pooled_dim(self) -> int:
        """Width of the time-pooled vector feeding the embedding projection."""
        return self.heads * self.head_dim if self.attention_enabled else self.hidden_dim

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{f.name: d[f.name] for f in fields(cls)})


class GruGates(NamedTuple):
    Wz: np.ndarray
    Wr: np.ndarray
    Wh: np.ndarray
    bz: np.ndarray
    br: np.ndarray
    bh: np.ndarray


@dataclass
class ModelParams:
    """All learnable arrays; attention / head fields are None when ablated."""

    enc_Wz: np.ndarray
    enc_Wr: np.ndarray
    enc_Wh: np.ndarray
    enc_bz: np.ndarray
    enc_br: np.ndarray
    enc_bh: np.ndarray
    att_Wq: np.ndarray | None
    att_Wk: np.ndarray | None
    att_Wv: np.ndarray | None
    pool_W: np.ndarray
    pool_b: np.ndarray
    dec_W0: np.ndarray
    dec_b0: np.ndarray
    dec_Wz: np.ndarray
    dec_Wr: np.ndarray
    dec_Wh: np.ndarray
    dec_bz: np.ndarray
    dec_br: np.ndarray
    dec_bh: np.ndarray
    out_W: np.ndarray
    out_b: np.ndarray
    mlp_W1: np.ndarray | None
    mlp_b1: np.ndarray | None
    mlp_W2: np.ndarray | None
    mlp_b2: np.ndarray | None

    def encoder_gates(self) -> GruGates:
        return GruGates(self.enc_Wz, self.enc_Wr, self.enc_Wh,
                        self.enc_bz, self.enc_br, self.enc_bh)

    def decoder_gates(self) -> GruGates:
        return GruGates(self.dec_Wz, self.dec_Wr, self.dec_Wh,
                        self.dec_bz, self.dec_br, self.dec_bh)

    def present_fields(self) -> list[str]:
        return [f.name for f in fields(self) if getattr(self, f.name) is not None]

    def flatten(self) -> np.ndarray:
        """All present arrays concatenated in declaration order."""
        return np.concatenate([getattr(self, n).reshape(-1) for n in self.present_fields()])

    def unflatten(self, vec: np.ndarray) -> "ModelParams":
        """New params with this instance's shapes, values from ``vec``."""
        out = {}
        pos = 0
        for f in fields(self):
            a = getattr(self, f.name)
            if a is None:
                out[f.name] = None
                continue
            n = a.size
            out[f.name] = np.asarray(vec[pos:pos + n], dtype=float).reshape(a.shape).copy()
            pos += n
        if pos != vec.size:
            raise ValueError(f"flat vector length {vec.size} != parameter count {pos}")
        return ModelParams(**out)

    def copy(self) -> "ModelParams":
        return ModelParams(**{
            f.name: (None if getattr(self, f.name) is None else getattr(self, f.name).copy())
            for f in fields(self)
        })

    def zeros_like(self) -> "ModelParams":
        return ModelParams(**{
            f.name: (None if getattr(self, f.name) is None
                     else np.zeros_like(getattr(self, f.name)))
            for f in fields(self)
        })

    def num_params(self) -> int:
        return sum(getattr(self, n).size for n in self.present_fields())


def _uniform_fan_in(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return (rng.uniform(shape) * 2.0 - 1.0) * bound


def init_params(config: ModelConfig, rng: Rng) -> ModelParams:
    """Seeded uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases."""
    dh, d, p = config.hidden_dim, config.input_dim, config.embed_dim
    enc_in = dh + d
    dec_in = dh + p
    kw: dict = {}
    for g in ("z", "r", "h"):
        kw[f"enc_W{g}"] = _uniform_fan_in(rng, (enc_in, dh), enc_in)
        kw[f"enc_b{g}"] = np.zeros(dh)
    if config.attention_enabled:
        for name in ("att_Wq", "att_Wk", "att_Wv"):
            kw[name] = _uniform_fan_in(rng, (config.heads, dh, config.head_dim), dh)
    else:
        kw["att_Wq"] = kw["att_Wk"] = kw["att_Wv"] = None
    kw["pool_W"] = _uniform_fan_in(rng, (config.pooled_dim, p), config.pooled_dim)
    kw["pool_b"] = np.zeros(p)
    kw["dec_W0"] = _uniform_fan_in(rng, (p, dh), p)
    kw["dec_b0"] = np.zeros(dh)
    for g in ("z", "r", "h"):
        kw[f"dec_W{g}"] = _uniform_fan_in(rng, (dec_in, dh), dec_in)
        kw[f"dec_b{g}"] = np.zeros(dh)
    kw["out_W"] = _uniform_fan_in(rng, (dh, d), dh)
    kw["out_b"] = np.zeros(d)
    if config.outcome_head_enabled:
        m = config.mlp_hidden
        kw["mlp_W1"] = _uniform_fan_in(rng, (p, m), p)
        kw["mlp_b1"] = np.zeros(m)
        kw["mlp_W2"] = _uniform_fan_in(rng, (m, 1), m)
        kw["mlp_b2"] = np.zeros(1)
    else:
        kw["mlp_W1"] = kw["mlp_b1"] = kw["mlp_W2"] = kw["mlp_b2"] = None
    return ModelParams(**kw)


def _gru_step(x, h_prev, g: GruGates):
    """One cell update; returns (h, z, r, candidate) for the batch."""
    cat = np.concatenate([h_prev, x], axis=-1)
    z = sigmoid(cat @ g.Wz + g.bz)
    r = sigmoid(cat @ g.Wr + g.br)
    cat_h = np.concatenate([r * h_prev, x], axis=-1)
    cand = np.tanh(cat_h @ g.Wh + g.bh)
    h = (1.0 - z) * h_prev + z * cand
    return h, z, r, cand


def gru_cell_forward(x_t: np.ndarray, h_prev: np.ndarray, gates: GruGates) -> np.ndarray:
    """Single GRU cell update: update/reset gates on [h_prev, x]."""
    x_t = np.asarray(x_t, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    hidden = gates.Wz.shape[1]
    if h_prev.shape[-1] != hidden or x_t.shape[-1] != gates.Wz.shape[0] - hidden:
        raise ValueError(
            f"gru cell dimension mismatch: x {x_t.shape}, h {h_prev.shape}, "
            f"gate map {gates.Wz.shape}"
        )
    h, _, _, _ = _gru_step(x_t, h_prev, gates)
    return h


@dataclass
class ForwardTrace:
    """Everything the analytic backward pass needs, for one batch."""

    mode: str
    # encoder
    enc_h: np.ndarray        # (B, T, dh)
    enc_z: np.ndarray
    enc_r: np.ndarray
    enc_cand: np.ndarray
    # attention (None when ablated)
    att_weights: np.ndarray | None   # (M, B, T, T), rows sum to 1
    att_v: np.ndarray | None         # (M, B, T, dk)
    ctx: np.ndarray          # (B, T, pooled_dim) attended (or raw) states
    pooled: np.ndarray       # (B, pooled_dim) time mean of ctx
    embedding: np.ndarray    # (B, p) before dropout
    emb_mask: np.ndarray     # inverted-dropout mask actually applied
    emb_drop: np.ndarray
    # decoder
    dec_s0: np.ndarray
    dec_s: np.ndarray        # (B, T, dh)
    dec_z: np.ndarray
    dec_r: np.ndarray
    dec_cand: np.ndarray
    x_hat: np.ndarray        # (B, T, d)
    # outcome head (None when ablated)
    mlp_a: np.ndarray | None
    mlp_mask: np.ndarray | None
    mlp_a_drop: np.ndarray | None
    logit: np.ndarray | None      # (B,)
    y_prob: np.ndarray | None     # (B,) in (0, 1)

    @property
    def batch_size(self) -> int:
        return self.enc_h.shape[0]


def _as_batch(x: np.ndarray, config: ModelConfig) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None, :, :]
    if x.ndim != 3 or x.shape[1] != config.seq_len or x.shape[2] != config.input_dim:
        raise ValueError(
            f"expected windows of shape (B, {config.seq_len}, {config.input_dim}), got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in input window")
    return x


def attention_forward(H, params: ModelParams, config: ModelConfig):
    """Two-head scaled dot-product attention over encoder states, pooled.

    Returns the projected embedding and the per-head row-softmax weight
    matrices.  Accepts a single (T, dh) state matrix or a (B, T, dh) batch.
    """
    H = np.asarray(H, dtype=float)
    single = H.ndim == 2
    if single:
        H = H[None]
    if H.shape[-1] != config.hidden_dim:
        raise ValueError(f"state width {H.shape[-1]} != hidden_dim {config.hidden_dim}")
    ctx, weights, _ = _attention(H, params, config)
    pooled = ctx.mean(axis=1)
    emb = pooled @ params.pool_W + params.pool_b
    if single:
        return emb[0], weights[:, 0]
    return emb, weights


def _attention(H, params, config):
    scale = 1.0 / math.sqrt(config.head_dim)
    heads_out, weights, values = [], [], []
    for m in range(config.heads):
        q = H @ params.att_Wq[m]
        k = H @ params.att_Wk[m]
        v = H @ params.att_Wv[m]
        scores = np.matmul(q, k.swapaxes(-1, -2)) * scale
        a = softmax(scores)
        heads_out.append(np.matmul(a, v))
        weights.append(a)
        values.append(v)
    ctx = np.concatenate(heads_out, axis=-1)
    return ctx, np.stack(weights), np.stack(values)


def _dropout_mask(rng: Rng | None, shape, rate: float) -> np.ndarray:
    if rate == 0.0:
        return np.ones(shape)
    if rng is None:
        raise ValueError("train-mode forward with dropout_rate > 0 requires an rng")
    keep = (rng.uniform(shape) >= rate).astype(float)
    return keep / (1.0 - rate)


def forward(x, params: ModelParams, config: ModelConfig,
            mode: str = "eval", rng: Rng | None = None) -> ForwardTrace:
    """Full pass: encoder unroll, attention pooling, decoder, outcome head.

    ``mode`` is "train" (dropout applied, masks drawn from ``rng`` and
    recorded in the trace) or "eval" (deterministic, dropout off).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = _as_batch(x, config)
    B, T, _ = x.shape
    dh = config.hidden_dim
    enc = params.encoder_gates()

    h = np.zeros((B, dh))
    enc_h = np.empty((B, T, dh))
    enc_z = np.empty((B, T, dh))
    enc_r = np.empty((B, T, dh))
    enc_cand = np.empty((B, T, dh))
    for t in range(T):
        h, z, r, cand = _gru_step(x[:, t, :], h, enc)
        if not np.all(np.isfinite(h)):
            raise FloatingPointError(f"non-finite encoder state at step {t}")
        enc_h[:, t], enc_z[:, t], enc_r[:, t], enc_cand[:, t] = h, z, r, cand

    if config.attention_enabled:
        ctx, att_weights, att_v = _attention(enc_h, params, config)
    else:
        ctx, att_weights, att_v = enc_h, None, None
    pooled = ctx.mean(axis=1)
    embedding = pooled @ params.pool_W + params.pool_b

    if mode == "train":
        emb_mask = _dropout_mask(rng, embedding.shape, config.dropout_rate)
    else:
        emb_mask = np.ones_like(embedding)
    emb_drop = embedding * emb_mask

    dec = params.decoder_gates()
    s = emb_drop @ params.dec_W0 + params.dec_b0
    dec_s0 = s
    dec_s = np.empty((B, T, dh))
    dec_z = np.empty((B, T, dh))
    dec_r = np.empty((B, T, dh))
    dec_cand = np.empty((B, T, dh))
    for t in range(T):
        s, z, r, cand = _gru_step(emb_drop, s, dec)
        if not np.all(np.isfinite(s)):
            raise FloatingPointError(f"non-finite decoder state at step {t}")
        dec_s[:, t], dec_z[:, t], dec_r[:, t], dec_cand[:, t] = s, z, r, cand
    x_hat = dec_s @ params.out_W + params.out_b

    mlp_a = mlp_mask = mlp_a_drop = logit = y_prob = None
    if config.outcome_head_enabled:
        mlp_a = np.tanh(emb_drop @ params.mlp_W1 + params.mlp_b1)
        if mode == "train":
            mlp_mask = _dropout_mask(rng, mlp_a.shape, config.dropout_rate)
        else:
            mlp_mask = np.ones_like(mlp_a)
        mlp_a_drop = mlp_a * mlp_mask
        logit = (mlp_a_drop @ params.mlp_W2)[:, 0] + params.mlp_b2[0]
        y_prob = sigmoid(logit)

    return ForwardTrace(
        mode=mode, enc_h=enc_h, enc_z=enc_z, enc_r=enc_r, enc_cand=enc_cand,
        att_weights=att_weights, att_v=att_v, ctx=ctx, pooled=pooled,
        embedding=embedding, emb_mask=emb_mask, emb_drop=emb_drop,
        dec_s0=dec_s0, dec_s=dec_s, dec_z=dec_z, dec_r=dec_r, dec_cand=dec_cand,
        x_hat=x_hat, mlp_a=mlp_a, mlp_mask=mlp_mask, mlp_a_drop=mlp_a_drop,
        logit=logit, y_prob=y_prob,
    )


def embed(x, params: ModelParams, config: ModelConfig) -> np.ndarray:
    """Eval-mode embeddings for a (N, T, d) stack of windows."""
    return forward(x, params, config, mode="eval").embedding


def _gru_cell_backward(d_h, x, h_prev, z, r, cand, g: GruGates,
                       dWz, dWr, dWh, dbz, dbr, dbh):
    """Backward through one cell step.

    Accumulates gate-weight gradients in the provided arrays and returns
    (d_h_prev, d_x) for the incoming state and the step input.
    """
    hidden = h_prev.shape[-1]
    d_cand = d_h * z
    d_z = d_h * (cand - h_prev)
    d_h_prev = d_h * (1.0 - z)

    d_ah = d_cand * (1.0 - cand * cand)
    cat_h = np.concatenate([r * h_prev, x], axis=-1)
    dWh += cat_h.T @ d_ah
    dbh += d_ah.sum(axis=0)
    d_cat_h = d_ah @ g.Wh.T
    d_rh = d_cat_h[:, :hidden]
    d_x = d_cat_h[:, hidden:].copy()
    d_r = d_rh * h_prev
    d_h_prev = d_h_prev + d_rh * r

    cat = np.concatenate([h_prev, x], axis=-1)
    d_ar = d_r * r * (1.0 - r)
    dWr += cat.T @ d_ar
    dbr += d_ar.sum(axis=0)
    d_cat_r = d_ar @ g.Wr.T
    d_h_prev = d_h_prev + d_cat_r[:, :hidden]
    d_x += d_cat_r[:, hidden:]

    d_az = d_z * z * (1.0 - z)
    dWz += cat.T @ d_az
    dbz += d_az.sum(axis=0)
    d_cat_z = d_az @ g.Wz.T
    d_h_prev = d_h_prev + d_cat_z[:, :hidden]
    d_x += d_cat_z[:, hidden:]
    return d_h_prev, d_x


def _attention_backward(d_ctx, trace: ForwardTrace, params, config, grads):
    """Backprop d_ctx (B, T, M*dk) through all heads; returns d_H."""
    H = trace.enc_h
    dk = config.head_dim
    scale = 1.0 / math.sqrt(dk)
    d_H = np.zeros_like(H)
    for m in range(config.heads):
        d_y = d_ctx[:, :, m * dk:(m + 1) * dk]
        a = trace.att_weights[m]
        v = trace.att_v[m]
        q = H @ params.att_Wq[m]
        k = H @ params.att_Wk[m]
        d_a = np.matmul(d_y, v.swapaxes(-1, -2))
        d_v = np.matmul(a.swapaxes(-1, -2), d_y)
        # row-softmax backward
        d_s = a * (d_a - np.sum(d_a * a, axis=-1, keepdims=True))
        d_q = np.matmul(d_s, k) * scale
        d_k = np.matmul(d_s.swapaxes(-1, -2), q) * scale
        grads.att_Wq[m] += np.einsum("bth,btk->hk", H, d_q)
        grads.att_Wk[m] += np.einsum("bth,btk->hk", H, d_k)
        grads.att_Wv[m] += np.einsum("bth,btk->hk", H, d_v)
        d_H += np.matmul(d_q, params.att_Wq[m].T)
        d_H += np.matmul(d_k, params.att_Wk[m].T)
        d_H += np.matmul(d_v, params.att_Wv[m].T)
    return d_H


def _backward_shared(d_emb_drop, x, trace: ForwardTrace, params, config, grads):
    """Embedding -> pooling -> attention -> encoder BPTT."""
    B, T, _ = x.shape
    d_emb = d_emb_drop * trace.emb_mask
    grads.pool_W += trace.pooled.T @ d_emb
    grads.pool_b += d_emb.sum(axis=0)
    d_pooled = d_emb @ params.pool_W.T
    d_ctx = np.repeat(d_pooled[:, None, :] / T, T, axis=1)
    if config.attention_enabled:
        d_H = _attention_backward(d_ctx, trace, params, config, grads)
    else:
        d_H = d_ctx
    enc = params.encoder_gates()
    d_carry = np.zeros((B, config.hidden_dim))
    for t in range(T - 1, -1, -1):
        d_h = d_H[:, t] + d_carry
        h_prev = trace.enc_h[:, t - 1] if t > 0 else np.zeros_like(d_carry)
        d_carry, _ = _gru_cell_backward(
            d_h, x[:, t], h_prev, trace.enc_z[:, t], trace.enc_r[:, t],
            trace.enc_cand[:, t], enc,
            grads.enc_Wz, grads.enc_Wr, grads.enc_Wh,
            grads.enc_bz, grads.enc_br, grads.enc_bh,
        )


def backward(trace: ForwardTrace, x, y, params: ModelParams,
             config: ModelConfig) -> tuple[ModelParams, ModelParams | None]:
    """Gradients of the batch-mean reconstruction and outcome losses.

    Returns (g_ae, g_bce) as parameter-shaped containers; g_bce is None
    when the outcome head is disabled.  Dropout masks recorded in the
    trace are honored, so these are exact gradients of the train-mode
    losses the trace was produced under.
    """
    x = _as_batch(x, config)
    B, T, d = x.shape
    if trace.batch_size != B:
        raise ValueError(f"trace batch size {trace.batch_size} != input batch size {B}")

    # --- reconstruction loss path ---
    g_ae = params.zeros_like()
    d_xhat = 2.0 * (trace.x_hat - x) / (B * T * d)
    g_ae.out_W += np.einsum("bth,btd->hd", trace.dec_s, d_xhat)
    g_ae.out_b += d_xhat.sum(axis=(0, 1))
    d_s_seq = np.matmul(d_xhat, params.out_W.T)

    dec = params.decoder_gates()
    d_carry = np.zeros((B, config.hidden_dim))
    d_emb_drop = np.zeros((B, config.embed_dim))
    for t in range(T - 1, -1, -1):
        d_s = d_s_seq[:, t] + d_carry
        s_prev = trace.dec_s[:, t - 1] if t > 0 else trace.dec_s0
        d_carry, d_u = _gru_cell_backward(
            d_s, trace.emb_drop, s_prev, trace.dec_z[:, t], trace.dec_r[:, t],
            trace.dec_cand[:, t], dec,
            g_ae.dec_Wz, g_ae.dec_Wr, g_ae.dec_Wh,
            g_ae.dec_bz, g_ae.dec_br, g_ae.dec_bh,
        )
        d_emb_drop += d_u
    g_ae.dec_W0 += trace.emb_drop.T @ d_carry
    g_ae.dec_b0 += d_carry.sum(axis=0)
    d_emb_drop += d_carry @ params.dec_W0.T
    _backward_shared(d_emb_drop, x, trace, params, config, g_ae)

    if not config.outcome_head_enabled:
        return g_ae, None

    # --- outcome loss path ---
    if y is None:
        raise ValueError("labels required for the outcome-loss gradient")
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != B:
        raise ValueError(f"label count {y.shape[0]} != batch size {B}")
    g_bce = params.zeros_like()
    d_logit = (trace.y_prob - y) / B
    g_bce.mlp_W2 += (trace.mlp_a_drop.T @ d_logit)[:, None]
    g_bce.mlp_b2 += np.array([d_logit.sum()])
    d_a_drop = d_logit[:, None] @ params.mlp_W2.T
    d_a = d_a_drop * trace.mlp_mask
    d_a_pre = d_a * (1.0 - trace.mlp_a * trace.mlp_a)
    g_bce.mlp_W1 += trace.emb_drop.T @ d_a_pre
    g_bce.mlp_b1 += d_a_pre.sum(axis=0)
    d_emb_drop = d_a_pre @ params.mlp_W1.T
    _backward_shared(d_emb_drop, x, trace, params, config, g_bce)
    return g_ae, g_bce


def save_checkpoint(path, params: ModelParams, config: ModelConfig,
                    extra_meta: dict | None = None) -> None:
    arrays = {n: getattr(params, n) for n in params.present_fields()}
    meta = {"format": CHECKPOINT_FORMAT, "config": config.to_dict()}
    if extra_meta:
        meta.update(extra_meta)
    save_arrays(path, arrays, meta)


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig, dict]:
    arrays, meta = load_arrays(path)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a model checkpoint")
    config = ModelConfig.from_dict(meta["config"])
    kw = {f.name: arrays.get(f.name) for f in fields(ModelParams)}
    return ModelParams(**kw), config, meta
