"""Rotated-box detection metrics: greedy TP/FP resolution, PR curves, 101-point AP.

Detections are ``(score, box)`` pairs and ground truths are boxes, all in
pixel space ``(cx, cy, w, h, angle_deg)``. Images are keyed by any hashable
id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InputError
from .rbox import rbox_iou

THRESHOLDS = tuple(np.round(0.5 + 0.05 * np.arange(10), 2))
SCORE_FLOOR = 0.05
RECALL_GRID = np.linspace(0.0, 1.0, 101)


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = rbox_iou(a, b)
    return out


def _by_score(dets):
    """Stable descending-score order: equal scores keep insertion order."""
    return sorted(range(len(dets)), key=lambda i: -dets[i][0])


def resolve_matches(dets, gts, iou_thresh, ious=None):
    """Greedy matching of score-sorted detections to ground truth.

    Each detection takes the unmatched ground truth of highest IoU when that
    IoU is strictly above ``iou_thresh``. Returns ``(flags, n_fn)`` with
    ``flags[r]`` true when the ``r``-th detection in score order is a TP.
    """
    order = _by_score(dets)
    if ious is None:
        ious = iou_matrix([dets[i][1] for i in order], gts)
    else:
        ious = ious[order]
    taken = np.zeros(len(gts), dtype=bool)
    flags = np.zeros(len(order), dtype=bool)
    for r in range(len(order)):
        if not len(gts):
            break
        row = np.where(taken, -1.0, ious[r])
        j = int(np.argmax(row))
        if row[j] > iou_thresh:
            taken[j] = True
            flags[r] = True
    return flags, int(len(gts) - taken.sum())


def precision_recall(flags, n_gt):
    """Cumulative precision and recall at every rank of a score-ordered flag list."""
    flags = np.asarray(flags, dtype=bool)
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    precision = tp / np.maximum(tp + fp, 1)
    recall = tp / n_gt if n_gt > 0 else np.zeros(len(flags))
    return precision, recall


def average_precision(precision, recall) -> float:
    """101-point interpolated AP: mean over r in {0, .01, ..., 1} of max precision at recall >= r."""
    precision, recall = np.asarray(precision, float), np.asarray(recall, float)
    if not len(precision):
        return 0.0
    # running max from the right gives the interpolated envelope
    env = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID - 1e-12, side="left")
    vals = np.where(idx < len(env), env[np.minimum(idx, len(env) - 1)], 0.0)
    return float(vals.mean())


@dataclass
class EvalReport:
    ap: dict
    counts: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)

    @property
    def map50(self) -> float:
        return self.ap[0.5]

    @property
    def map(self) -> float:
        return float(np.mean([self.ap[t] for t in sorted(self.ap)]))

    def lines(self):
        out = [f"ap@{t:.2f} {self.ap[t]:.10f}" for t in sorted(self.ap)]
        out.append(f"map@0.50 {self.map50:.10f}")
        out.append(f"map@0.50:0.95 {self.map:.10f}")
        for t in sorted(self.counts):
            tp, fp, fn = self.counts[t]
            out.append(f"counts@{t:.2f} tp={tp} fp={fp} fn={fn}")
        return out


def map_report(dets_by_image, gts_by_image, thresholds=THRESHOLDS, score_floor=SCORE_FLOOR):
    """AP at each IoU threshold over all images, plus mAP@0.5 and mAP@[0.5:0.95].

    Detections with score at or below ``score_floor`` are dropped first.
    """
    unknown = set(dets_by_image) - set(gts_by_image)
    if unknown:
        raise InputError(f"detections reference unknown images: {sorted(map(str, unknown))}")
    per_image = []
    for img, gts in gts_by_image.items():
        dets = [d for d in dets_by_image.get(img, []) if d[0] > score_floor]
        order = _by_score(dets)
        dets = [dets[i] for i in order]
        per_image.append((dets, gts, iou_matrix([d[1] for d in dets], gts)))
    n_gt = sum(len(g) for g in gts_by_image.values())
    scores = np.array([d[0] for dets, _, _ in per_image for d in dets])
    rank = np.argsort(-scores, kind="stable")

    ap, counts, curves = {}, {}, {}
    for thr in thresholds:
        thr = float(thr)
        flags, fn = [], 0
        for dets, gts, ious in per_image:
            f, n = resolve_matches(dets, gts, thr, ious=ious)
            flags.append(f)
            fn += n
        flags = np.concatenate(flags)[rank] if len(rank) else np.zeros(0, dtype=bool)
        precision, recall = precision_recall(flags, n_gt)
        ap[thr] = average_precision(precision, recall) if n_gt else 0.0
        counts[thr] = (int(flags.sum()), int((~flags).sum()), fn)
        curves[thr] = (precision, recall)
    return EvalReport(ap, counts, curves)


def write_report(report: EvalReport, path, curves_path=None):
    with open(path, "w") as fh:
        fh.write("\n".join(report.lines()) + "\n")
    if curves_path is not None:
        with open(curves_path, "w") as fh:
            fh.write("threshold rank precision recall\n")
            for t in sorted(report.curves):
                p, r = report.curves[t]
                for i in range(len(p)):
                    fh.write(f"{t:.2f} {i} {p[i]:.10f} {r[i]:.10f}\n")


def read_report(path) -> dict:
    """Parse the ``key value`` lines of a written report into floats (count lines skipped)."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("counts@"):
                continue
            if len(parts) != 2:
                raise FormatError(f"line {n}: expected 'key value'")
            out[parts[0]] = float(parts[1])
    return out
