"""Multi-head attention and post-norm encoder/decoder stacks.

Sequences use a features-first layout: a sequence of length ``n`` with
``k`` features is a ``(..., k, n)`` tensor, and every weight multiplies
from the left.
"""

from __future__ import annotations

from dataclasses import dataclass
import itertools
import math

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .nn import Linear, Module, param, xavier_uniform


@dataclass(frozen=True)
class Ctx:
    """Forward-pass mode. Dropout masks are keyed by (seed, site id, step)."""

    train: bool = False
    seed: int = 0
    step: int = 0

    def key(self, site):
        return (self.seed, site, self.step)


EVAL = Ctx()


def _add_pos(x, p):
    return x if p is None else x + p


def single_head_attention(Xq, Xkv, Pq, Pkv, wq, wk, wv, scale=None, record=None):
    """One attention head; returns the ``(..., k_head, Nq)`` head output.

    Positional encodings are added to queries and keys only. ``scale``
    defaults to ``1/sqrt(k_head)``.
    """
    Xq, Xkv = T.as_tensor(Xq), T.as_tensor(Xkv)
    if Pq is not None and tuple(np.shape(T.as_tensor(Pq).data)[-2:]) != Xq.shape[-2:]:
        raise DimensionError("query positional encoding does not match the query sequence")
    if Pkv is not None and tuple(np.shape(T.as_tensor(Pkv).data)[-2:]) != Xkv.shape[-2:]:
        raise DimensionError("key positional encoding does not match the key/value sequence")
    Q = wq @ _add_pos(Xq, Pq)
    K = wk @ _add_pos(Xkv, Pkv)
    V = wv @ Xkv
    kh = Q.shape[-2]
    scale = 1.0 / math.sqrt(kh) if scale is None else scale
    delta = T.softmax((T.transpose(Q, _swap_last(Q.ndim)) @ K) * scale, axis=-1)
    if record is not None:
        record.append(delta.data)
    return V @ T.transpose(delta, _swap_last(delta.ndim))


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class AttentionParams(Module):
    """Stacked per-head query/key/value projections plus the output projection."""

    def __init__(self, rng, k, heads):
        if heads < 1 or k % heads:
            raise ParameterError(f"head count {heads} must divide k={k}")
        self.k, self.heads = k, heads
        self.wq = param(xavier_uniform(rng, k, k))
        self.wk = param(xavier_uniform(rng, k, k))
        self.wv = param(xavier_uniform(rng, k, k))
        self.proj = param(xavier_uniform(rng, k, k))

    def head(self, m):
        kh = self.k // self.heads
        sl = slice(m * kh, (m + 1) * kh)
        return self.wq[sl], self.wk[sl], self.wv[sl]


class AttentionBlock(Module):
    """Attention followed by dropout, residual add and layer norm."""

    def __init__(self, rng, k, heads, dropout, site):
        self.attn = AttentionParams(rng, k, heads)
        self.gain = param(np.ones((k, 1)))
        self.bias = param(np.zeros((k, 1)))
        self.p, self.site = dropout, site

    def __call__(self, Xq, Xkv, Pq, Pkv, ctx=EVAL, record=None):
        return multi_head_attention(Xq, Xkv, Pq, Pkv, self, self.p, ctx, record)


def multi_head_attention(Xq, Xkv, Pq, Pkv, block: AttentionBlock, p=0.0, ctx=EVAL, record=None):
    """``layer_norm(Xq + dropout(L [head_1 : ... : head_M]))``."""
    a = block.attn
    Xq, Xkv = T.as_tensor(Xq), T.as_tensor(Xkv)
    k, M = a.k, a.heads
    if Xq.shape[-2] != k or Xkv.shape[-2] != k:
        raise DimensionError(f"attention expects {k} features, got {Xq.shape} / {Xkv.shape}")
    kh = k // M
    lead = Xq.shape[:-2]
    nq, nkv = Xq.shape[-1], Xkv.shape[-1]
    Q = (a.wq @ _add_pos(Xq, Pq)).reshape(lead + (M, kh, nq))
    K = (a.wk @ _add_pos(Xkv, Pkv)).reshape(Xkv.shape[:-2] + (M, kh, nkv))
    V = (a.wv @ Xkv).reshape(Xkv.shape[:-2] + (M, kh, nkv))
    scores = (T.transpose(Q, _swap_last(Q.ndim)) @ K) * (1.0 / math.sqrt(kh))
    delta = T.softmax(scores, axis=-1)                          # (..., M, nq, nkv)
    if record is not None:
        record.append(delta.data)
    heads = (V @ T.transpose(delta, _swap_last(delta.ndim))).reshape(lead + (k, nq))
    out = T.dropout(a.proj @ heads, p, ctx.train, ctx.key(block.site))
    return T.layer_norm(Xq + out, block.gain, block.bias, axis=-2)


class FeedForward(Module):
    def __init__(self, rng, k, d_ff, dropout, site):
        self.lin1 = Linear(rng, k, d_ff)
        self.lin2 = Linear(rng, d_ff, k)
        self.gain = param(np.ones((k, 1)))
        self.bias = param(np.zeros((k, 1)))
        self.p, self.site = dropout, site

    def __call__(self, x, ctx=EVAL):
        y = T.dropout(self.lin2(T.relu(self.lin1(x))), self.p, ctx.train, ctx.key(self.site))
        return T.layer_norm(x + y, self.gain, self.bias, axis=-2)


class EncoderLayer(Module):
    def __init__(self, rng, k, heads, d_ff, dropout, sites):
        self.self_attn = AttentionBlock(rng, k, heads, dropout, next(sites))
        self.ffn = FeedForward(rng, k, d_ff, dropout, next(sites))

    def __call__(self, x, pos, ctx=EVAL, record=None):
        x = self.self_attn(x, x, pos, pos, ctx, record)
        return self.ffn(x, ctx)


class DecoderLayer(Module):
    def __init__(self, rng, k, heads, d_ff, dropout, sites, self_attention=True):
        self.self_attn = AttentionBlock(rng, k, heads, dropout, next(sites)) if self_attention else None
        self.cross_attn = AttentionBlock(rng, k, heads, dropout, next(sites))
        self.ffn = FeedForward(rng, k, d_ff, dropout, next(sites))

    def __call__(self, tgt, query_pos, memory, mem_pos, ctx=EVAL, record=None):
        if self.self_attn is not None:
            tgt = self.self_attn(tgt, tgt, query_pos, query_pos, ctx, record)
        tgt = self.cross_attn(tgt, memory, query_pos, mem_pos, ctx, record)
        return self.ffn(tgt, ctx)


def encoder_forward(seq, pos, layers, ctx=EVAL, record=None):
    """Run the encoder stack; ``pos`` is re-added at every attention."""
    x = T.as_tensor(seq)
    if x.shape[-1] == 0:
        raise DimensionError("encoder input sequence is empty")
    for layer in layers:
        x = layer(x, pos, ctx, record)
    return x


def decoder_forward(queries, memory, mem_pos, layers, ctx=EVAL, record=None):
    """Decode ``N`` object queries (``k x N``) against encoder memory.

    The decoder state starts at zero and the queries act as its positional
    encoding at every attention.
    """
    memory = T.as_tensor(memory)
    queries = T.as_tensor(queries)
    k, n = queries.shape[-2:]
    tgt = T.Tensor(np.zeros(memory.shape[:-2] + (k, n)))
    for layer in layers:
        tgt = layer(tgt, queries, memory, mem_pos, ctx, record)
    return tgt


class Transformer(Module):
    def __init__(self, rng, k=32, heads=4, enc_layers=2, dec_layers=2, num_queries=10,
                 d_ff=None, dropout=0.1):
        d_ff = 4 * k if d_ff is None else d_ff
        sites = itertools.count(1)
        self.encoder = [EncoderLayer(rng, k, heads, d_ff, dropout, sites) for _ in range(enc_layers)]
        self.decoder = [DecoderLayer(rng, k, heads, d_ff, dropout, sites, self_attention=i > 0)
                        for i in range(dec_layers)]
        self.queries = param(rng.normal(size=(k, num_queries)))

    def __call__(self, seq, pos, ctx=EVAL, record=None):
        memory = encoder_forward(seq, pos, self.encoder, ctx, record)
        return decoder_forward(self.queries, memory, pos, self.decoder, ctx, record)
