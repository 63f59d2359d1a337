"""The full detector: channel boosting ensemble, transformer, and prediction head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .colorspace import boost_channels
from .ensemble import BackboneConfig, ChannelEnsemble
from .head import DetectHead, Predictions, denormalize, head_forward
from .nn import Module
from .transformer import EVAL, Transformer


@dataclass(frozen=True)
class ModelConfig:
    k: int = 32
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    num_queries: int = 10
    stage_channels: tuple = (8, 16, 64)
    stage_strides: tuple = (2, 2, 2)
    d_ff: int = 128
    dropout: float = 0.1

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(tuple(self.stage_channels), tuple(self.stage_strides))


class Detector(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.ensemble = ChannelEnsemble(rng, cfg.backbone, cfg.k)
        self.transformer = Transformer(rng, cfg.k, cfg.heads, cfg.enc_layers, cfg.dec_layers,
                                       cfg.num_queries, cfg.d_ff, cfg.dropout)
        self.head = DetectHead(rng, cfg.k)

    def forward_variants(self, variants, ctx=EVAL, record=None) -> Predictions:
        seq, pos = self.ensemble(variants)
        emb = self.transformer(seq, pos, ctx, record)
        return head_forward(emb, self.head)

    def __call__(self, images, ctx=EVAL, record=None) -> Predictions:
        """``(B,) H x W x 3`` sRGB frames in [0, 1] -> predictions per query."""
        return self.forward_variants(boost_channels(images), ctx, record)

    def param_groups(self):
        """``backbone`` = the three branches and the fusion conv; ``transformer`` = the rest."""
        backbone = [p for n, p in self.named_parameters()
                    if n.startswith("ensemble.branches.") or n.startswith("ensemble.fuse.")]
        ids = {id(p) for p in backbone}
        rest = [p for p in self.parameters() if id(p) not in ids]
        return {"backbone": backbone, "transformer": rest}


def detections(pred: Predictions, img_w, img_h, b=None):
    """``(score, pixel box tuple)`` per query of one image (``b`` selects a batch entry)."""
    probs = pred.probs if b is None else pred.probs[b]
    boxes = pred.boxes.data if b is None else pred.boxes.data[b]
    return [(float(probs[i, 0]), denormalize(boxes[i], img_w, img_h).astuple())
            for i in range(len(boxes))]
