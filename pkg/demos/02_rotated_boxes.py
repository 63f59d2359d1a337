"""
Rotated boxes: overlap and the CIoU loss
========================================

Exact IoU of rotated rectangles by polygon clipping, checked against a
Monte-Carlo estimate, followed by the terms of the CIoU loss.
"""

import numpy as np

from rsdk.rbox import RBox, ciou_terms, rbox_corners, rbox_iou

# A box is (cx, cy, w, h, angle); the angle is in degrees, counter-clockwise
# as seen on screen.
a = RBox(0.0, 0.0, 4.0, 2.0, 0.0)
b = RBox(0.5, 0.2, 4.0, 2.0, 30.0)
print("corners of b:\n", rbox_corners(b).round(3))
print("IoU(a, b) =", rbox_iou(a, b))

# Monte-Carlo sanity check: sample points in a square covering both boxes.
rng = np.random.default_rng(0)
pts = rng.uniform(-3, 3, size=(400_000, 2))


def inside(box, p):
    t = np.radians(box.angle)
    dx, dy = p[:, 0] - box.cx, p[:, 1] - box.cy
    lx, ly = np.cos(t) * dx - np.sin(t) * dy, np.sin(t) * dx + np.cos(t) * dy
    return (np.abs(lx) <= box.w / 2) & (np.abs(ly) <= box.h / 2)


ia, ib = inside(a, pts), inside(b, pts)
print("Monte-Carlo IoU ~", (ia & ib).sum() / (ia | ib).sum())

# Turning a box by 180 degrees, or swapping w and h while adding 90 degrees,
# describes the same rectangle.
print("IoU with the half-turned copy:", rbox_iou(b, RBox(0.5, 0.2, 4.0, 2.0, 210.0)))
print("IoU with the w/h-swapped copy:", rbox_iou(b, RBox(0.5, 0.2, 2.0, 4.0, 120.0)))

# CIoU adds a center-distance penalty and an aspect-ratio term to 1 - IoU.
for pred in (b, RBox(3.0, 1.0, 4.0, 2.0, 0.0), RBox(0.0, 0.0, 2.0, 2.0, 0.0)):
    t = ciou_terms(pred, a)
    print(f"pred={pred.astuple()}  iou={t['iou']:.3f}  rho2/c2={t['rho2'] / t['c2']:.3f}  "
          f"nu={t['nu']:.4f}  loss={t['loss']:.3f}")
