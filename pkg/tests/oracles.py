"""Independent reference computations used as test oracles.

Nothing here imports the code under test beyond plain data types.
"""

import itertools
import math

import numpy as np


def mc_rbox_iou(a, b, n=1_000_000, seed=0):
    """Monte-Carlo IoU of two rotated boxes (cx, cy, w, h, angle_deg).

    Angles rotate counter-clockwise on screen (y axis down). Samples are
    uniform over the axis-aligned box covering both rectangles.
    """
    def corners(bx):
        cx, cy, w, h, ang = bx
        t = math.radians(ang)
        c, s = math.cos(t), math.sin(t)
        pts = []
        for dx, dy in ((-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)):
            pts.append((cx + dx * c + dy * s, cy - dx * s + dy * c))
        return np.array(pts)

    def inside(bx, p):
        cx, cy, w, h, ang = bx
        t = math.radians(ang)
        c, s = math.cos(t), math.sin(t)
        px, py = p[:, 0] - cx, p[:, 1] - cy
        lx = c * px - s * py
        ly = s * px + c * py
        return (np.abs(lx) <= w / 2) & (np.abs(ly) <= h / 2)

    pts = np.vstack([corners(a), corners(b)])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    rng = np.random.default_rng(seed)
    p = lo + rng.uniform(size=(n, 2)) * (hi - lo)
    ia, ib = inside(a, p), inside(b, p)
    both = np.count_nonzero(ia & ib)
    union = np.count_nonzero(ia | ib)
    return both / union if union else 0.0


def brute_force_assignment(cost):
    """Minimum total cost over all permutations; returns (total, perm)."""
    cost = np.asarray(cost, dtype=np.float64)
    n = len(cost)
    best, best_p = math.inf, None
    for perm in itertools.permutations(range(n)):
        total = sum(cost[i][perm[i]] for i in range(n))
        if total < best:
            best, best_p = total, perm
    return best, best_p


def ap101(precision, recall):
    """101-point interpolated AP straight from the definition, in pure Python."""
    total = 0.0
    for i in range(101):
        r = i / 100
        cands = [p for p, rc in zip(precision, recall) if rc >= r - 1e-12]
        total += max(cands) if cands else 0.0
    return total / 101


def scripted_map(dets_by_image, gts_by_image, iou_fn, thresholds, score_floor=0.05):
    """End-to-end evaluator written from the definitions with plain loops.

    ``dets_by_image``: image -> list of (score, box); ``gts_by_image``:
    image -> list of box. Greedy matching per image in descending score
    (stable), strict ``IoU > threshold``.
    """
    out = {}
    n_gt = sum(len(g) for g in gts_by_image.values())
    for thr in thresholds:
        records = []   # (score, global order, tp flag)
        order = 0
        for img in gts_by_image:
            dets = [d for d in dets_by_image.get(img, []) if d[0] > score_floor]
            dets = sorted(enumerate(dets), key=lambda t: (-t[1][0], t[0]))
            used = set()
            for _, (score, box) in dets:
                best, best_j = -1.0, None
                for j, g in enumerate(gts_by_image[img]):
                    if j in used:
                        continue
                    v = iou_fn(box, g)
                    if v > best:
                        best, best_j = v, j
                tp = best_j is not None and best > thr
                if tp:
                    used.add(best_j)
                records.append((score, order, tp))
                order += 1
        records.sort(key=lambda t: (-t[0], t[1]))
        tp = fp = 0
        prec, rec = [], []
        for _, _, flag in records:
            tp += flag
            fp += not flag
            prec.append(tp / (tp + fp))
            rec.append(tp / n_gt if n_gt else 0.0)
        out[thr] = ap101(prec, rec) if records else 0.0
    return out
