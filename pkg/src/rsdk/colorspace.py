"""sRGB to CIELAB / CIELUV conversion for the channel-boosting inputs.

All conversions assume the sRGB transfer curve and the D65 white point.
The reference white is taken as the XYZ image of RGB (1, 1, 1) under the
conversion matrix, so sRGB white lands exactly on L=100 with zero chroma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, RangeError
from .tensor import Tensor

SPACES = ("RGB", "LUV", "LAB")

# linear sRGB -> XYZ (D65)
XYZ_FROM_RGB = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
WHITE = XYZ_FROM_RGB.sum(axis=1)

_EPS = (6.0 / 29.0) ** 3
_KAPPA = (29.0 / 3.0) ** 3


@dataclass(frozen=True)
class ImagePlane:
    """An ``H x W x 3`` float64 image tagged with its color space."""

    data: np.ndarray
    space: str = "RGB"

    def __post_init__(self):
        if self.space not in SPACES:
            raise ParameterError(f"unknown color space {self.space!r}")
        if self.data.ndim != 3 or self.data.shape[-1] != 3:
            raise ParameterError(f"image plane must be HxWx3, got {self.data.shape}")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


def _check_rgb(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise ParameterError(f"last axis must hold 3 channels, got {rgb.shape}")
    if not np.all(np.isfinite(rgb)) or rgb.min(initial=0.0) < 0.0 or rgb.max(initial=0.0) > 1.0:
        raise RangeError("RGB values must lie in [0, 1]")
    return rgb


def srgb_to_linear(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)
    return np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)


def srgb_to_xyz(rgb):
    return srgb_to_linear(_check_rgb(rgb)) @ XYZ_FROM_RGB.T


def _lightness(y_rel):
    return np.where(y_rel > _EPS, 116.0 * np.cbrt(y_rel) - 16.0, _KAPPA * y_rel)


def srgb_to_lab(rgb):
    """Array-level sRGB -> CIELAB on the last axis."""
    xyz = srgb_to_xyz(rgb) / WHITE
    f = np.where(xyz > _EPS, np.cbrt(xyz), xyz * _KAPPA / 116.0 + 16.0 / 116.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def _uv_prime(xyz):
    d = xyz[..., 0] + 15.0 * xyz[..., 1] + 3.0 * xyz[..., 2]
    safe = np.where(d > 0, d, 1.0)
    return 4.0 * xyz[..., 0] / safe, 9.0 * xyz[..., 1] / safe, d > 0


def srgb_to_luv(rgb):
    """Array-level sRGB -> CIELUV; pure black maps to (0, 0, 0)."""
    xyz = srgb_to_xyz(rgb)
    un, vn, _ = _uv_prime(WHITE)
    up, vp, ok = _uv_prime(xyz)
    L = _lightness(xyz[..., 1] / WHITE[1])
    u = np.where(ok, 13.0 * L * (up - un), 0.0)
    v = np.where(ok, 13.0 * L * (vp - vn), 0.0)
    return np.stack([L, u, v], axis=-1)


def _require_rgb(img: ImagePlane):
    if img.space != "RGB":
        raise ParameterError(f"expected an RGB plane, got {img.space}")


def rgb_to_lab(img: ImagePlane) -> ImagePlane:
    _require_rgb(img)
    return ImagePlane(srgb_to_lab(img.data), "LAB")


def rgb_to_luv(img: ImagePlane) -> ImagePlane:
    _require_rgb(img)
    return ImagePlane(srgb_to_luv(img.data), "LUV")


def normalize_array(data, space):
    """Map a ``... x 3`` plane to roughly unit-range network inputs."""
    data = np.asarray(data, dtype=np.float64)
    if space == "RGB":
        return 2.0 * data - 1.0
    return data * np.array([1.0 / 100.0, 1.0 / 128.0, 1.0 / 128.0])


def normalize_plane(img: ImagePlane) -> Tensor:
    """Channels-first ``3 x H x W`` tensor of the normalized plane."""
    return Tensor(np.ascontiguousarray(np.moveaxis(normalize_array(img.data, img.space), -1, 0)))


def boost_channels(rgb):
    """The three normalized variants (RGB, LUV, LAB) of an ``H x W x 3`` or
    ``B x H x W x 3`` sRGB array, each channels-first."""
    rgb = _check_rgb(rgb)
    out = []
    for space, conv in (("RGB", None), ("LUV", srgb_to_luv), ("LAB", srgb_to_lab)):
        plane = rgb if conv is None else conv(rgb)
        out.append(np.ascontiguousarray(np.moveaxis(normalize_array(plane, space), -1, -3)))
    return out
