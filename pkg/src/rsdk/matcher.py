"""Bipartite matching of predictions to padded ground truth, and the set loss.

Boxes here are normalized ``(cx, cy, w, h, a)`` rows with ``a * 360`` the
counter-clockwise angle in degrees. Label 0 is ``vehicle``; the no-object
label is the last class index.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, InputError
from .rbox import ciou_loss_tensor, ciou_terms

LAMBDA_IOU = 2.0
LAMBDA_L1 = 4.0
NO_OBJECT_WEIGHT = 0.1
ANGLE_UNIT = 360.0


def _degrees(b):
    b = np.asarray(b, dtype=np.float64)
    return (b[0], b[1], b[2], b[3], b[4] * ANGLE_UNIT)


def match_cost(gt_box, pred_prob, pred_box, lambda_iou=LAMBDA_IOU, lambda_l1=LAMBDA_L1) -> float:
    """Cost of assigning one real object to one prediction.

    ``-p + lambda_iou * CIoU + lambda_l1 * L1`` with the exact rotated IoU
    inside CIoU. Padded no-object rows are not priced here; they cost 0.
    """
    ciou = ciou_terms(_degrees(pred_box), _degrees(gt_box))["loss"]
    l1 = float(np.abs(np.asarray(gt_box, float) - np.asarray(pred_box, float)).sum())
    return -float(pred_prob) + lambda_iou * ciou + lambda_l1 * l1


def cost_matrix(gt_boxes, pred_probs, pred_boxes, **kw) -> np.ndarray:
    """N x N matrix; row j is ground truth j (padded rows are zero), column i is query i."""
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 5)
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 5)
    n = len(pred_boxes)
    if len(gt_boxes) > n:
        raise DimensionError(f"{len(gt_boxes)} objects exceed the {n} query slots")
    cost = np.zeros((n, n))
    for j, g in enumerate(gt_boxes):
        for i in range(n):
            cost[j, i] = match_cost(g, pred_probs[i], pred_boxes[i], **kw)
    return cost


def hungarian(cost) -> np.ndarray:
    """Minimum-cost assignment of every row to a distinct column, O(n^2 m).

    Shortest augmenting paths with dual potentials. Returns ``eta`` with
    ``eta[j]`` the column given to row ``j``. Among equally cheap columns the
    lowest index is taken, so results are reproducible.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise DimensionError(f"cost must be a matrix, got shape {c.shape}")
    n, m = c.shape
    if n > m:
        raise DimensionError(f"more rows ({n}) than columns ({m})")
    if not np.isfinite(c).all():
        raise InputError("cost matrix contains NaN or infinite entries")
    if n == 0:
        return np.zeros(0, dtype=np.int64)

    # 1-based arrays; column 0 is the virtual source of each augmentation
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    for row in range(1, n + 1):
        owner[0] = row
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    eta = np.empty(n, dtype=np.int64)
    for col in range(1, m + 1):
        if owner[col]:
            eta[owner[col] - 1] = col - 1
    return eta


def assignment_cost(cost, eta) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    return float(sum(cost[j, eta[j]] for j in range(len(eta))))


def _check_bijective(eta, n):
    eta = np.asarray(eta)
    if eta.shape != (n,) or sorted(eta.tolist()) != list(range(n)):
        raise ContractError(f"assignment {eta.tolist()} is not a permutation of {n} slots")


def box_loss(pred, gt, alpha=None, lambda_iou=LAMBDA_IOU, lambda_l1=LAMBDA_L1):
    """Composite box loss for ``M`` rows: ``lambda_iou * CIoU + lambda_l1 * L1``.

    ``pred`` is an ``M x 5`` tensor, ``gt`` an ``M x 5`` array. Returns
    ``(total, ciou, l1, alpha)`` where the first three are per-row tensors.
    """
    ciou, alpha = ciou_loss_tensor(pred, gt, alpha=alpha, angle_unit=ANGLE_UNIT)
    l1 = T.tabs(T.as_tensor(pred) - np.asarray(gt, dtype=np.float64)).sum(axis=-1)
    return ciou * lambda_iou + l1 * lambda_l1, ciou, l1, alpha


def match(gt_boxes, log_probs, boxes):
    """Optimal assignment for one image.

    ``log_probs`` is ``N x (classes + 1)`` and ``boxes`` is ``N x 5``
    (tensors or arrays). Returns ``(eta, cost)``.
    """
    lp = log_probs.data if isinstance(log_probs, T.Tensor) else np.asarray(log_probs)
    bx = boxes.data if isinstance(boxes, T.Tensor) else np.asarray(boxes)
    cost = cost_matrix(gt_boxes, np.exp(lp[:, 0]), bx)
    return hungarian(cost), cost


def hungarian_loss(gt_boxes, log_probs, boxes, eta, alpha=None, no_object_weight=NO_OBJECT_WEIGHT):
    """Set loss of one image under a fixed assignment.

    ``sum_j -w_j log p[eta(j), c_j] + sum_{real j} box_loss``, where
    ``w_j`` is 1 for real objects and ``no_object_weight`` for padding.
    Returns ``(loss, parts)``; ``parts`` carries the class NLL, CIoU and L1
    sums as floats and the ``alpha`` used, which can be passed back in to
    hold it fixed.
    """
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 5)
    n, n_cls = log_probs.shape
    _check_bijective(eta, n)
    n_obj = len(gt_boxes)
    eta = np.asarray(eta)
    real = eta[:n_obj]
    labels = np.full(n, n_cls - 1)
    labels[:n_obj] = 0
    weights = np.full(n, no_object_weight)
    weights[:n_obj] = 1.0
    nll = -(log_probs[eta, labels] * weights).sum()
    parts = {"nll": nll.item(), "ciou": 0.0, "l1": 0.0, "alpha": np.zeros(0)}
    if n_obj == 0:
        return nll, parts
    total, ciou, l1, alpha = box_loss(boxes[real], gt_boxes, alpha=alpha)
    parts.update(ciou=ciou.sum().item(), l1=l1.sum().item(), alpha=alpha)
    return nll + total.sum(), parts

