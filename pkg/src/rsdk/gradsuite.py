"""Finite-difference gradient suites behind ``rsdk gradcheck``.

Each suite builds a small random problem and returns the worst relative
error between backward() and central differences (h = 1e-5).
"""

from __future__ import annotations

import itertools
import time

import numpy as np

from . import tensor as T
from .gradcheck import check
from .head import DetectHead, head_forward
from .matcher import box_loss
from .model import Detector, ModelConfig
from .tensor import Tensor
from .transformer import AttentionBlock, Ctx, DecoderLayer, EncoderLayer, multi_head_attention

TOLERANCE = 1e-4
FULL_LOSS_PROBES = 32        # entries probed per parameter tensor; smaller tensors are probed fully
TOY_MODEL = ModelConfig(k=8, heads=2, enc_layers=2, dec_layers=2, num_queries=2,
                        stage_channels=(4, 8), stage_strides=(2, 2), d_ff=16, dropout=0.1)


def _leaf(rng, *shape, low=None, high=None):
    data = rng.normal(size=shape) if low is None else rng.uniform(low, high, size=shape)
    return Tensor(data, requires_grad=True)


def _weighted(rng, fn, *tensors, shape=None):
    w = rng.normal(size=shape)
    return check(lambda: (fn() * w).sum(), list(tensors))


def _unary(op, low=None, high=None):
    def run(rng):
        x = _leaf(rng, 4, 5, low=low, high=high)
        return _weighted(rng, lambda: op(x), x, shape=(4, 5))
    return run


def _binary(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
    c = _leaf(rng, 3, 1, low=1.0, high=2.0)
    return _weighted(rng, lambda: (a + b) * c - b / c ** 2, a, b, c, shape=(3, 4))


def _minmax(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    return _weighted(rng, lambda: T.maximum(a, b) * 2 + T.minimum(a, b), a, b, shape=(3, 4))


def _matmul(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 2)
    return _weighted(rng, lambda: a @ b, a, b, shape=(2, 3, 2))


def _softmax(rng):
    x = _leaf(rng, 3, 5)
    return max(_weighted(rng, lambda: T.softmax(x, axis=-1), x, shape=(3, 5)),
               _weighted(rng, lambda: T.log_softmax(x, axis=0), x, shape=(3, 5)))


def _layer_norm(rng):
    x, g, b = _leaf(rng, 6, 4), _leaf(rng, 6, 1), _leaf(rng, 6, 1)
    return _weighted(rng, lambda: T.layer_norm(x, g, b, axis=0), x, g, b, shape=(6, 4))


def _conv(rng):
    x, w, b = _leaf(rng, 2, 3, 7, 6), _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)
    return _weighted(rng, lambda: T.conv2d(x, w, b, stride=2, padding=1), x, w, b, shape=(2, 4, 4, 3))


def _shape_ops(rng):
    a, b = _leaf(rng, 2, 3), _leaf(rng, 2, 2)
    w = rng.normal(size=(5, 2))

    def f():
        c = T.concat([a, b], axis=1)
        s = T.stack([a, a * 2], axis=0)
        return ((c.T * w).sum() + c.reshape(10)[[1, 1, 7]].sum() + T.amax(c, 1).sum()
                + T.amin(c, 0).sum() + s.mean())

    return check(f, [a, b])


def _dropout(rng):
    x = _leaf(rng, 5, 6)
    return _weighted(rng, lambda: T.dropout(x, 0.3, True, key=(1, 2, 3)), x, shape=(5, 6))


def _attention(rng):
    blk = AttentionBlock(rng, 8, 2, 0.1, 1)
    Xq, Xkv, Pq = _leaf(rng, 8, 3), _leaf(rng, 8, 4), _leaf(rng, 8, 3)
    ctx = Ctx(True, 0, 1)
    return _weighted(rng, lambda: multi_head_attention(Xq, Xkv, Pq, None, blk, 0.1, ctx),
                     Xq, Xkv, Pq, *blk.parameters(), shape=(8, 3))


def _encoder_decoder(rng):
    sites = itertools.count(1)
    enc = EncoderLayer(rng, 8, 2, 16, 0.0, sites)
    dec = DecoderLayer(rng, 8, 2, 16, 0.0, sites, self_attention=True)
    x, pos, q = _leaf(rng, 8, 4), rng.normal(size=(8, 4)), _leaf(rng, 8, 2)

    def f():
        mem = enc(x, pos)
        return dec(T.as_tensor(np.zeros((8, 2))) + q * 0.5, q, mem, pos)

    return _weighted(rng, f, x, q, *enc.parameters(), *dec.parameters(), shape=(8, 2))


def _head(rng):
    head = DetectHead(rng, 8)
    emb = _leaf(rng, 8, 3)
    r1, r2 = rng.normal(size=(3, 2)), rng.normal(size=(3, 5))

    def f():
        p = head_forward(emb, head)
        return (p.log_probs * r1).sum() + (p.boxes * r2).sum()

    return check(f, [emb] + head.parameters())


def _box_loss(rng):
    pred = Tensor(np.column_stack([rng.uniform(0.3, 0.7, 5), rng.uniform(0.3, 0.7, 5),
                                   rng.uniform(0.1, 0.3, 5), rng.uniform(0.1, 0.3, 5),
                                   rng.uniform(0, 1, 5)]), requires_grad=True)
    gt = np.column_stack([rng.uniform(0.3, 0.7, 5), rng.uniform(0.3, 0.7, 5),
                          rng.uniform(0.1, 0.3, 5), rng.uniform(0.1, 0.3, 5), rng.uniform(0, 0.5, 5)])
    _, _, _, alpha = box_loss(pred, gt)
    return check(lambda: box_loss(pred, gt, alpha=alpha)[0].sum(), [pred])


def toy_problem(seed=0):
    """k=8, N=2 detector on two 8x8 frames with one and two objects."""
    rng = np.random.default_rng(seed)
    model = Detector(TOY_MODEL, seed=seed)
    images = rng.uniform(size=(2, 8, 8, 3))
    targets = [np.array([[0.4, 0.5, 0.3, 0.2, 0.1]]),
               np.array([[0.3, 0.3, 0.2, 0.2, 0.05], [0.7, 0.6, 0.25, 0.15, 0.3]])]
    return model, images, targets


def full_loss_error(seed=0, max_probes=FULL_LOSS_PROBES):
    """Gradient check of the whole detection loss with assignment and alpha held fixed.

    Every parameter tensor is probed; ``max_probes`` caps the random subset
    of entries per tensor (``None`` probes all 8k entries, about a minute).
    """
    from .train import batch_loss

    model, images, targets = toy_problem(seed)
    ctx = Ctx(True, seed, 1)
    _, _, frozen = batch_loss(model, images, targets, ctx)
    f = lambda: batch_loss(model, images, targets, ctx, frozen)[0]
    return check(f, model.parameters(), max_probes=max_probes, rng=np.random.default_rng(seed))


SUITES = {
    "matmul": _matmul,
    "add/sub/mul/div/pow": _binary,
    "maximum/minimum": _minmax,
    "exp": _unary(T.exp),
    "log": _unary(T.log, 0.5, 2.0),
    "sqrt": _unary(T.sqrt, 0.5, 2.0),
    "abs": _unary(T.tabs),
    "sin": _unary(T.sin),
    "cos": _unary(T.cos),
    "arctan": _unary(T.arctan),
    "relu": _unary(T.relu),
    "sigmoid": _unary(T.sigmoid),
    "softmax/log_softmax": _softmax,
    "layer_norm": _layer_norm,
    "conv2d": _conv,
    "concat/stack/reshape/index/amax/amin": _shape_ops,
    "dropout": _dropout,
    "multi_head_attention": _attention,
    "encoder/decoder layer": _encoder_decoder,
    "detect_head": _head,
    "box_loss (CIoU + L1)": _box_loss,
    "full detection loss": lambda rng: full_loss_error(int(rng.integers(2**31))),
}

SCOPES = {"ops": [n for n in SUITES if n not in ("full detection loss",)],
          "model": ["full detection loss"],
          "all": list(SUITES)}


def run(scope="all", seed=0, tolerance=TOLERANCE):
    """Run the suites of ``scope``; returns rows ``(name, error, seconds, passed)``."""
    rows = []
    for name in SCOPES[scope]:
        t0 = time.perf_counter()
        err = SUITES[name](np.random.default_rng(seed))
        rows.append((name, err, time.perf_counter() - t0, err < tolerance))
    return rows


def format_table(rows) -> str:
    width = max(len(r[0]) for r in rows)
    lines = [f"{'suite':<{width}}  max_rel_error  seconds  status"]
    for name, err, sec, ok in rows:
        lines.append(f"{name:<{width}}  {err:13.3e}  {sec:7.2f}  {'PASS' if ok else 'FAIL'}")
    return "\n".join(lines)
