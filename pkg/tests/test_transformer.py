import math

import numpy as np
import pytest

from rsdk import tensor as T
from rsdk.errors import DimensionError, ParameterError
from rsdk.gradcheck import check
from rsdk.tensor import Tensor
from rsdk.transformer import (AttentionBlock, Ctx, DecoderLayer, EncoderLayer, Transformer,
                              decoder_forward, encoder_forward, multi_head_attention,
                              single_head_attention)


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def enc_layers(rng, n, k=8, heads=2, p=0.0):
    import itertools
    sites = itertools.count(1)
    return [EncoderLayer(rng, k, heads, 4 * k, p, sites) for _ in range(n)]


def dec_layers(rng, n, k=8, heads=2, p=0.0):
    import itertools
    sites = itertools.count(100)
    return [DecoderLayer(rng, k, heads, 4 * k, p, sites, self_attention=i > 0) for i in range(n)]


# ---------------------------------------------------------------- single head

def test_identical_keys_give_uniform_weights(rng):
    k = 4
    Xq = rng.normal(size=(k, 3))
    Xkv = rng.normal(size=(k, 5))
    Pkv = 1.5 - Xkv                       # keys see a constant sequence, values do not
    wq, wk, wv = (Tensor(rng.normal(size=(k, k))) for _ in range(3))
    rec = []
    out = single_head_attention(Xq, Xkv, None, Pkv, wq, wk, wv, record=rec)
    np.testing.assert_allclose(rec[0], 1 / 5, atol=1e-15)
    V = wv.data @ Xkv
    np.testing.assert_allclose(out.data, np.repeat(V.mean(axis=1, keepdims=True), 3, 1), atol=1e-12)


def test_singleton_key_returns_value(rng):
    k = 4
    Xkv = rng.normal(size=(k, 1))
    wq, wk, wv = (Tensor(rng.normal(size=(k, k))) for _ in range(3))
    out = single_head_attention(rng.normal(size=(k, 6)), Xkv, None, None, wq, wk, wv)
    np.testing.assert_allclose(out.data, np.repeat(wv.data @ Xkv, 6, 1), atol=1e-14)


def test_two_key_hand_case():
    eye = Tensor(np.eye(2))
    rec = []
    single_head_attention([[1.0], [0.0]], [[1.0, 0.0], [0.0, 0.0]], None, None, eye, eye, eye, record=rec)
    s = 1 / math.sqrt(2)
    np.testing.assert_allclose(rec[0][0], [0.6698, 0.3302], atol=1e-4)
    np.testing.assert_allclose(rec[0][0], [math.exp(s) / (1 + math.exp(s)), 1 / (1 + math.exp(s))],
                               atol=1e-15)


def test_positional_encoding_shape_checked(rng):
    w = Tensor(np.eye(4))
    with pytest.raises(DimensionError):
        single_head_attention(np.zeros((4, 3)), np.zeros((4, 2)), np.zeros((4, 2)), None, w, w, w)


# ---------------------------------------------------------------- multi head

def test_multi_head_equals_concat_of_single_heads(rng):
    k, M = 8, 4
    blk = AttentionBlock(rng, k, M, 0.0, 1)
    Xq, Xkv = rng.normal(size=(k, 3)), rng.normal(size=(k, 5))
    Pq, Pkv = rng.normal(size=(k, 3)), rng.normal(size=(k, 5))
    heads = [single_head_attention(Xq, Xkv, Pq, Pkv, *blk.attn.head(m)).data for m in range(M)]
    Xp = blk.attn.proj.data @ np.concatenate(heads, axis=0)
    ref = T.layer_norm(Tensor(Xq + Xp), axis=0).data
    out = multi_head_attention(Xq, Xkv, Pq, Pkv, blk).data
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_single_head_degenerate_case(rng):
    k = 6
    blk = AttentionBlock(rng, k, 1, 0.0, 1)
    Xq, Xkv = rng.normal(size=(k, 2)), rng.normal(size=(k, 4))
    h = single_head_attention(Xq, Xkv, None, None, blk.attn.wq, blk.attn.wk, blk.attn.wv).data
    ref = T.layer_norm(Tensor(Xq + blk.attn.proj.data @ h), axis=0).data
    np.testing.assert_allclose(multi_head_attention(Xq, Xkv, None, None, blk).data, ref, atol=1e-12)


@pytest.mark.parametrize("M", [1, 2, 4, 8])
def test_multi_head_shape(rng, M):
    blk = AttentionBlock(rng, 8, M, 0.1, 1)
    assert multi_head_attention(rng.normal(size=(2, 8, 3)), rng.normal(size=(2, 8, 7)), None, None,
                                blk, 0.1, Ctx(train=True)).shape == (2, 8, 3)


def test_head_count_must_divide_k(rng):
    with pytest.raises(ParameterError):
        AttentionBlock(rng, 8, 3, 0.0, 1)


def test_multi_head_gradient(rng):
    blk = AttentionBlock(rng, 8, 2, 0.0, 1)
    Xq = Tensor(rng.normal(size=(8, 3)), requires_grad=True)
    Xkv = Tensor(rng.normal(size=(8, 3)), requires_grad=True)
    Pq = Tensor(rng.normal(size=(8, 3)), requires_grad=True)
    r = rng.normal(size=(8, 3))
    f = lambda: (multi_head_attention(Xq, Xkv, Pq, None, blk) * r).sum()
    assert check(f, [Xq, Xkv, Pq] + blk.parameters()) < 1e-4


def test_values_ignore_positional_encodings(rng):
    k = 8
    blk = AttentionBlock(rng, k, 2, 0.0, 1)
    blk.attn.wq.data[:] = 0
    blk.attn.wk.data[:] = 0
    Xq, Xkv = rng.normal(size=(k, 3)), rng.normal(size=(k, 5))
    a = multi_head_attention(Xq, Xkv, None, None, blk).data
    b = multi_head_attention(Xq, Xkv, rng.normal(size=(k, 3)) + 5, rng.normal(size=(k, 5)) - 3, blk).data
    np.testing.assert_allclose(a, b, atol=1e-12)


# ---------------------------------------------------------------- encoder

def test_encoder_zero_layers_identity(rng):
    x = rng.normal(size=(8, 5))
    np.testing.assert_array_equal(encoder_forward(x, None, []).data, x)


def test_encoder_shape(rng):
    x = rng.normal(size=(2, 8, 5))
    assert encoder_forward(x, rng.normal(size=(8, 5)), enc_layers(rng, 2)).shape == (2, 8, 5)


def test_encoder_permutation_equivariance(rng):
    layers = enc_layers(rng, 3)
    x, pos = rng.normal(size=(8, 9)), rng.normal(size=(8, 9))
    perm = rng.permutation(9)
    a = encoder_forward(x, pos, layers).data
    b = encoder_forward(x[:, perm], pos[:, perm], layers).data
    assert np.abs(a[:, perm] - b).max() < 1e-10


def test_attention_rows_sum_to_one(rng):
    rec = []
    model = Transformer(rng, k=8, heads=2, enc_layers=2, dec_layers=2, num_queries=3)
    model(rng.normal(size=(2, 8, 6)), rng.normal(size=(8, 6)), record=rec)
    assert len(rec) == 2 + 3           # first decoder layer has no self-attention
    for d in rec:
        assert np.abs(d.sum(axis=-1) - 1).max() < 1e-12


# ---------------------------------------------------------------- decoder

def test_decoder_single_query_shape(rng):
    q = Tensor(rng.normal(size=(8, 1)))
    assert decoder_forward(q, rng.normal(size=(8, 4)), None, dec_layers(rng, 1)).shape == (8, 1)


def test_first_layer_skips_self_attention(rng):
    layers = dec_layers(rng, 3)
    assert layers[0].self_attn is None
    assert all(l.self_attn is not None for l in layers[1:])


def test_identical_queries_identical_outputs(rng):
    col = rng.normal(size=(8, 1))
    q = Tensor(np.hstack([col, col, rng.normal(size=(8, 1))]))
    out = decoder_forward(q, rng.normal(size=(8, 5)), rng.normal(size=(8, 5)), dec_layers(rng, 2)).data
    np.testing.assert_array_equal(out[:, 0], out[:, 1])
    assert not np.allclose(out[:, 0], out[:, 2])


def test_decoder_memory_permutation_invariance(rng):
    layers = dec_layers(rng, 2)
    q = Tensor(rng.normal(size=(8, 3)))
    mem, pos = rng.normal(size=(8, 7)), rng.normal(size=(8, 7))
    perm = rng.permutation(7)
    a = decoder_forward(q, mem, pos, layers).data
    b = decoder_forward(q, mem[:, perm], pos[:, perm], layers).data
    assert np.abs(a - b).max() < 1e-10


def test_decoder_gradient_wrt_queries(rng):
    layers = dec_layers(rng, 2)
    q = Tensor(rng.normal(size=(8, 2)), requires_grad=True)
    mem, pos, r = rng.normal(size=(8, 4)), rng.normal(size=(8, 4)), rng.normal(size=(8, 2))
    assert check(lambda: (decoder_forward(q, mem, pos, layers) * r).sum(), [q]) < 1e-4


# ---------------------------------------------------------------- modes

def test_eval_mode_bit_identical(rng):
    model = Transformer(rng, k=8, heads=2, enc_layers=2, dec_layers=2, num_queries=3, dropout=0.1)
    x, pos = rng.normal(size=(8, 6)), rng.normal(size=(8, 6))
    assert model(x, pos).data.tobytes() == model(x, pos).data.tobytes()


def test_train_mode_dropout_keyed_by_step(rng):
    model = Transformer(rng, k=8, heads=2, enc_layers=1, dec_layers=1, num_queries=3, dropout=0.1)
    x, pos = rng.normal(size=(8, 6)), rng.normal(size=(8, 6))
    a = model(x, pos, Ctx(True, 5, 1)).data
    b = model(x, pos, Ctx(True, 5, 1)).data
    c = model(x, pos, Ctx(True, 5, 2)).data
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_dropout_sites_are_unique(rng):
    model = Transformer(rng, k=8, heads=2, enc_layers=2, dec_layers=3, num_queries=3)
    sites = []
    for l in model.encoder:
        sites += [l.self_attn.site, l.ffn.site]
    for l in model.decoder:
        sites += [b.site for b in (l.self_attn, l.cross_attn, l.ffn) if b is not None]
    assert len(sites) == len(set(sites)) == 4 + 8
