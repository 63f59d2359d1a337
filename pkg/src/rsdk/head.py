"""Per-query prediction head and box (de)normalization.

Each decoder embedding yields class log-probabilities over ``(vehicle, none)``
and a normalized box ``(cx/W, cy/H, w/W, h/H, angle/360)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ParameterError
from .nn import Linear, Module, xavier_uniform
from .rbox import RBox, canonical_angle

LABELS = ("vehicle",)
NUM_CLASSES = len(LABELS) + 1          # trailing no-object label
ANGLE_UNIT = 360.0


class DetectHead(Module):
    """Box MLP ``k -> k -> k -> 5`` (ReLU, ReLU, sigmoid) and a linear class layer."""

    def __init__(self, rng, k):
        self.box = [Linear(rng, k, k), Linear(rng, k, k), Linear(rng, k, 5)]
        self.cls = Linear(rng, k, NUM_CLASSES)
        for lin in self.box + [self.cls]:
            n_out, n_in = lin.weight.shape
            lin.weight.data = xavier_uniform(rng, n_out, n_in)


@dataclass
class Predictions:
    log_probs: T.Tensor        # (..., N, classes + 1)
    boxes: T.Tensor            # (..., N, 5), normalized

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs.data)

    def __len__(self):
        return self.boxes.shape[-2]


def _swap(t):
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return T.transpose(t, tuple(axes))


def head_forward(emb, head: DetectHead) -> Predictions:
    """``(..., k, N)`` embeddings -> per-query class log-probs and boxes."""
    emb = T.as_tensor(emb)
    x = T.relu(head.box[0](emb))
    x = T.relu(head.box[1](x))
    boxes = T.sigmoid(head.box[2](x))
    logits = head.cls(emb)
    return Predictions(T.log_softmax(_swap(logits), axis=-1), _swap(boxes))


def normalize_box(b, img_w, img_h) -> np.ndarray:
    """Pixel RBox -> normalized 5-vector, angle canonicalized to [0, 180) first."""
    if img_w <= 0 or img_h <= 0:
        raise ParameterError(f"image size must be positive, got {img_w}x{img_h}")
    b = b if isinstance(b, RBox) else RBox(*b)
    return np.array([b.cx / img_w, b.cy / img_h, b.w / img_w, b.h / img_h,
                     float(canonical_angle(b.angle)) / ANGLE_UNIT])


def denormalize(box, img_w, img_h) -> RBox:
    if img_w <= 0 or img_h <= 0:
        raise ParameterError(f"image size must be positive, got {img_w}x{img_h}")
    cx, cy, w, h, a = (float(v) for v in np.asarray(box, dtype=np.float64))
    return RBox(cx * img_w, cy * img_h, w * img_w, h * img_h, a * ANGLE_UNIT)
