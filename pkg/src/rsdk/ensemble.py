"""Channel-boosting feature ensemble.

Three independent convolutional backbones see the RGB, LUV and LAB
variants of one frame. Their feature maps are concatenated on the channel
axis, fused back to ``C`` channels by a 3x3 convolution, projected to ``k``
channels by a 1x1 convolution, and flattened into a ``k x hw`` sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .nn import Module, he_normal, param, xavier_uniform

VARIANTS = ("RGB", "LUV", "LAB")


@dataclass(frozen=True)
class BackboneConfig:
    stage_channels: tuple = (8, 16, 64)
    strides: tuple = None          # default: 2 per stage

    def __post_init__(self):
        if self.strides is None:
            object.__setattr__(self, "strides", (2,) * len(self.stage_channels))
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        object.__setattr__(self, "strides", tuple(self.strides))
        if len(self.stage_channels) != len(self.strides) or not self.stage_channels:
            raise ParameterError("stage_channels and strides must be non-empty and equal length")
        if any(c < 1 for c in self.stage_channels) or any(s < 1 for s in self.strides):
            raise ParameterError("channel counts and strides must be positive")

    @property
    def out_channels(self) -> int:
        return self.stage_channels[-1]

    @property
    def downsample(self) -> int:
        return int(np.prod(self.strides))


class ConvLayer(Module):
    def __init__(self, rng, c_in, c_out, k, stride=1, pad=None):
        self.weight = param(he_normal(rng, (c_out, c_in, k, k), c_in * k * k))
        self.bias = param(np.zeros(c_out))
        self.stride = stride
        self.pad = k // 2 if pad is None else pad

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class Backbone(Module):
    """Stack of ``conv3x3 -> ReLU -> strided conv3x3 -> ReLU`` stages."""

    def __init__(self, rng, cfg: BackboneConfig, in_channels=3):
        self.cfg = cfg
        self.stages = []
        c = in_channels
        for c_out, s in zip(cfg.stage_channels, cfg.strides):
            self.stages.append(ConvLayer(rng, c, c_out, 3))
            self.stages.append(ConvLayer(rng, c_out, c_out, 3, stride=s))
            c = c_out

    def __call__(self, x):
        return backbone_forward(x, self)


def backbone_forward(x, backbone: Backbone):
    """``(B,) 3 x H x W`` image -> ``(B,) C x H/s x W/s`` feature map."""
    x = T.as_tensor(x)
    s = backbone.cfg.downsample
    if x.shape[-1] % s or x.shape[-2] % s:
        raise DimensionError(f"input {x.shape[-2]}x{x.shape[-1]} not divisible by downsample {s}")
    for layer in backbone.stages:
        x = T.relu(layer(x))
    return x


def boost_and_fuse(f_rgb, f_luv, f_lab, fuse: ConvLayer):
    """Concatenate the three branch maps (channel axis) and fuse to C channels."""
    maps = [T.as_tensor(f) for f in (f_rgb, f_luv, f_lab)]
    if len({m.shape for m in maps}) != 1:
        raise DimensionError(f"branch maps differ in shape: {[m.shape for m in maps]}")
    return fuse(T.concat(maps, axis=-3))


def reduce_and_flatten(f, proj: ConvLayer, k: int):
    """1x1 projection C -> k, then flatten so (c, y, x) lands at index y*w + x."""
    f = T.as_tensor(f)
    C = f.shape[-3]
    if k > C:
        raise ParameterError(f"k={k} exceeds feature channels C={C}")
    if proj.weight.shape[:2] != (k, C):
        raise DimensionError(f"projection weight {proj.weight.shape} does not map {C} -> {k}")
    z = proj(f)
    h, w = z.shape[-2:]
    return z.reshape(z.shape[:-2] + (h * w,))


def positional_encoding_2d(h: int, w: int, k: int) -> np.ndarray:
    """Fixed sine/cosine encoding of shape ``k x (h*w)``.

    Channels ``[0, k/2)`` encode the row y and ``[k/2, k)`` the column x;
    within each half, channel ``2i`` is ``sin(pos * f_i)`` and ``2i+1`` is
    ``cos(pos * f_i)`` with ``f_i = 10000 ** (-4i/k)``.
    """
    if k % 4:
        raise ParameterError(f"positional encoding needs k divisible by 4, got {k}")
    freqs = 10000.0 ** (-4.0 * np.arange(k // 4) / k)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")

    def encode(pos):
        ang = pos.reshape(1, -1) * freqs[:, None]
        out = np.empty((k // 2, pos.size))
        out[0::2], out[1::2] = np.sin(ang), np.cos(ang)
        return out

    return np.concatenate([encode(ys), encode(xs)], axis=0)


class ChannelEnsemble(Module):
    """Backbone per color variant, fusion conv, and the C -> k reduction."""

    def __init__(self, rng, cfg: BackboneConfig, k: int):
        C = cfg.out_channels
        if k > C:
            raise ParameterError(f"k={k} exceeds backbone channels C={C}")
        self.cfg, self.k = cfg, k
        self.branches = [Backbone(rng, cfg) for _ in VARIANTS]
        self.route = list(range(len(VARIANTS)))        # variant i -> branch route[i]
        self.fuse = ConvLayer(rng, 3 * C, C, 3)
        self.proj = ConvLayer(rng, C, k, 1)
        self.proj.weight.data = xavier_uniform(rng, k, C).reshape(k, C, 1, 1)

    def feature_map(self, variants):
        f = [backbone_forward(x, self.branches[self.route[i]]) for i, x in enumerate(variants)]
        return boost_and_fuse(*f, self.fuse)

    def __call__(self, variants):
        """``variants``: normalized RGB, LUV, LAB arrays. Returns (sequence, pos)."""
        fused = self.feature_map(variants)
        seq = reduce_and_flatten(fused, self.proj, self.k)
        h, w = fused.shape[-2:]
        return seq, positional_encoding_2d(h, w, self.k)
