"""Rotated-box geometry, exact rotated IoU, and the CIoU loss.

Angles are in degrees, counter-clockwise as seen on an image whose y axis
points down. A box is ``(cx, cy, w, h, angle)``; the same code serves
pixel-space and normalized boxes.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from . import tensor as T
from .errors import ParameterError

FOUR_OVER_PI2 = 4.0 / math.pi ** 2


def canonical_angle(deg):
    """Map an angle to [0, 180); a rectangle is symmetric under 180 degrees."""
    return np.mod(deg, 180.0)


@dataclass(frozen=True)
class RBox:
    cx: float
    cy: float
    w: float
    h: float
    angle: float = 0.0

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h, self.angle)
        if not all(math.isfinite(v) for v in vals):
            raise ParameterError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ParameterError(f"box extents must be positive, got w={self.w}, h={self.h}")

    def astuple(self):
        return (self.cx, self.cy, self.w, self.h, self.angle)

    @property
    def area(self):
        return self.w * self.h

    def canonical(self) -> "RBox":
        return RBox(self.cx, self.cy, self.w, self.h, float(canonical_angle(self.angle)))


def _box(b) -> RBox:
    return b if isinstance(b, RBox) else RBox(*(float(v) for v in b))


def rotation(angle_deg):
    """Matrix taking box-frame offsets to image offsets (y down, CCW on screen)."""
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, s], [-s, c]])


def rbox_corners(b) -> np.ndarray:
    """The four corners (4 x 2) in counter-clockwise order (positive shoelace)."""
    b = _box(b)
    hw, hh = b.w / 2.0, b.h / 2.0
    local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
    return local @ rotation(b.angle).T + np.array([b.cx, b.cy])


def polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=np.float64)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_polygon(subject, clipper):
    """Sutherland-Hodgman: clip ``subject`` by the convex CCW polygon ``clipper``."""
    out = [tuple(p) for p in subject]
    clip = [tuple(p) for p in clipper]
    for i in range(len(clip)):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % len(clip)]
        ex, ey = bx - ax, by - ay
        inp, out = out, []
        for j in range(len(inp)):
            px, py = inp[j]
            qx, qy = inp[(j + 1) % len(inp)]
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            if sp >= 0:
                out.append((px, py))
            if (sp >= 0) != (sq >= 0):
                t = sp / (sp - sq)
                out.append((px + t * (qx - px), py + t * (qy - py)))
    return np.array(out).reshape(-1, 2)


def intersection_area(a, b) -> float:
    pa, pb = rbox_corners(a), rbox_corners(b)
    if (pa[:, 0].max() <= pb[:, 0].min() or pb[:, 0].max() <= pa[:, 0].min()
            or pa[:, 1].max() <= pb[:, 1].min() or pb[:, 1].max() <= pa[:, 1].min()):
        return 0.0
    return max(polygon_area(clip_polygon(pa, pb)), 0.0)


def rbox_iou(a, b) -> float:
    """Exact IoU of two rotated boxes, symmetric in its arguments bit for bit."""
    a, b = _box(a).canonical(), _box(b).canonical()
    if a == b:
        return 1.0
    if b.astuple() < a.astuple():
        a, b = b, a
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return float(min(max(inter / union, 0.0), 1.0))


def aspect_term(w, h, w_gt, h_gt):
    """Aspect-ratio consistency ``(4/pi^2) (atan(w_gt/h_gt) - atan(w/h))^2``."""
    return FOUR_OVER_PI2 * (math.atan(w_gt / h_gt) - math.atan(w / h)) ** 2


def enclosing_diag2(a, b) -> float:
    """Squared diagonal of the axis-aligned box covering all eight corners."""
    pts = np.vstack([rbox_corners(a), rbox_corners(b)])
    span = pts.max(axis=0) - pts.min(axis=0)
    return float(span @ span)


def ciou_terms(pred, gt) -> dict:
    """Non-differentiable CIoU with exact rotated IoU (for matching costs)."""
    pred, gt = _box(pred), _box(gt)
    iou = rbox_iou(pred, gt)
    rho2 = (pred.cx - gt.cx) ** 2 + (pred.cy - gt.cy) ** 2
    c2 = enclosing_diag2(pred, gt)
    nu = aspect_term(pred.w, pred.h, gt.w, gt.h)
    denom = (1.0 - iou) + nu
    alpha = nu / denom if denom > 0 else 0.0
    return {"iou": iou, "rho2": rho2, "c2": c2, "nu": nu, "alpha": alpha,
            "loss": 1.0 - iou + rho2 / c2 + alpha * nu}


def ciou_loss(pred, gt) -> float:
    return ciou_terms(pred, gt)["loss"]


# ---------------------------------------------------------------- differentiable path

def _iou_aligned(dx, dy, w1, h1, w2, h2):
    """IoU of axis-aligned boxes centered at (dx, dy) and the origin."""
    iw = T.relu(T.minimum(dx + w1 * 0.5, w2 * 0.5) - T.maximum(dx - w1 * 0.5, w2 * -0.5))
    ih = T.relu(T.minimum(dy + h1 * 0.5, h2 * 0.5) - T.maximum(dy - h1 * 0.5, h2 * -0.5))
    inter = iw * ih
    return inter / (w1 * h1 + w2 * h2 - inter)


def _aabb_halfextents(w, h, theta):
    c, s = T.cos(theta), T.sin(theta)
    ex = T.tabs(w * 0.5 * c) + T.tabs(h * 0.5 * s)
    ey = T.tabs(w * 0.5 * s) + T.tabs(h * 0.5 * c)
    return ex, ey


def ciou_loss_tensor(pred, gt, alpha=None, angle_unit=360.0):
    """Differentiable CIoU for ``M`` box pairs.

    ``pred`` is an ``M x 5`` tensor and ``gt`` an ``M x 5`` array, both
    ``(cx, cy, w, h, angle)`` with ``angle * angle_unit`` in degrees. The
    IoU term is taken along the ground-truth box's axes, with the prediction
    replaced by its hull in that frame. The hull is the prediction itself
    when the angles agree (mod 180), so equal-angle pairs get the exact IoU,
    and a prediction at 180 - angle is not mistaken for a match as it would
    be with image-axis hulls. The trade-off weight alpha is a constant; pass
    the value returned by a previous call to pin it. Returns
    ``(loss (M,), alpha (M,))``.
    """
    pred = T.as_tensor(pred)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 5)
    if np.any(pred.data[:, 2:4] <= 0) or np.any(gt[:, 2:4] <= 0):
        raise ParameterError("CIoU needs strictly positive widths and heights")
    to_rad = math.pi / 180.0 * angle_unit
    cx, cy, w, h, a = (pred[:, i] for i in range(5))
    gcx, gcy, gw, gh, ga = (gt[:, i] for i in range(5))
    theta = a * to_rad
    gtheta = ga * to_rad

    # IoU in the gt box frame against the prediction's hull along the gt axes
    dx, dy = cx - gcx, cy - gcy
    c, s = np.cos(gtheta), np.sin(gtheta)
    rx, ry = _aabb_halfextents(w, h, theta - gtheta)
    iou = _iou_aligned(dx * c - dy * s, dx * s + dy * c, rx * 2.0, ry * 2.0, gw, gh)

    # enclosing box over all corners == union of both image-axis hulls
    ex, ey = _aabb_halfextents(w, h, theta)
    gex = np.abs(gw * 0.5 * c) + np.abs(gh * 0.5 * s)
    gey = np.abs(gw * 0.5 * s) + np.abs(gh * 0.5 * c)
    x1 = T.minimum(cx - ex, gcx - gex)
    x2 = T.maximum(cx + ex, gcx + gex)
    y1 = T.minimum(cy - ey, gcy - gey)
    y2 = T.maximum(cy + ey, gcy + gey)
    c2 = (x2 - x1) ** 2 + (y2 - y1) ** 2
    rho2 = dx * dx + dy * dy

    nu = FOUR_OVER_PI2 * (np.arctan(gw / gh) - T.arctan(w / h)) ** 2
    if alpha is None:
        denom = (1.0 - iou.data) + nu.data
        alpha = np.divide(nu.data, denom, out=np.zeros_like(denom), where=denom > 0)
    loss = 1.0 - iou + rho2 / c2 + nu * alpha
    return loss, alpha


def ciou_gradient_surrogate(pred, gt, angle_unit=360.0) -> np.ndarray:
    """Gradient of the training CIoU w.r.t. the five components of ``pred``."""
    x = T.Tensor(np.asarray(pred, dtype=np.float64).reshape(1, 5), requires_grad=True)
    loss, _ = ciou_loss_tensor(x, np.asarray(gt, dtype=np.float64).reshape(1, 5), angle_unit=angle_unit)
    loss.sum().backward()
    return x.grad.reshape(5)
