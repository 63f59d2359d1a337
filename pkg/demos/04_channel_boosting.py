"""
Channel boosting: one frame, three colour spaces
================================================

A synthetic radar frame is converted to LUV and LAB, each variant runs
through its own backbone, and the fused feature map becomes the token
sequence the transformer reads.
"""

import numpy as np

from rsdk.colorspace import boost_channels, srgb_to_lab, srgb_to_luv
from rsdk.data import SynthConfig, render_scene
from rsdk.ensemble import BackboneConfig, ChannelEnsemble

rng = np.random.default_rng(0)
image, boxes = render_scene(rng, SynthConfig(width=32, height=32))
print("frame:", image.shape, "objects:", [tuple(round(v, 1) for v in b.astuple()) for b in boxes])

# White maps to L = 100 with no chroma in both spaces.
print("white in LAB:", srgb_to_lab([1.0, 1.0, 1.0]).round(6))
print("white in LUV:", srgb_to_luv([1.0, 1.0, 1.0]).round(6))

# boost_channels returns the three normalized variants, channels first.
variants = boost_channels(image)
for name, v in zip(("RGB", "LUV", "LAB"), variants):
    print(f"{name}: shape={v.shape} per-channel mean={v.mean(axis=(1, 2)).round(3)}")

# Three 2-stage backbones of stride 4, fused and reduced to k = 16 features.
cfg = BackboneConfig(stage_channels=(8, 16), strides=(2, 2))
ensemble = ChannelEnsemble(rng, cfg, k=16)
seq, pos = ensemble(variants)
print("token sequence:", seq.shape, "positional encoding:", pos.shape)
