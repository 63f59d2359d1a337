"""
Set matching and the Hungarian loss
===================================

A detector emits a fixed set of N predictions. Ground truth is padded with
"no object" entries to N rows, matched one-to-one at minimum cost, and the
loss is computed on that assignment.
"""

import numpy as np

from rsdk import tensor as T
from rsdk.matcher import cost_matrix, hungarian, hungarian_loss, match
from rsdk.tensor import Tensor

rng = np.random.default_rng(1)

# Two objects in normalized (cx, cy, w, h, angle/360) form.
gt = np.array([[0.30, 0.40, 0.20, 0.10, 0.05],
               [0.70, 0.60, 0.15, 0.08, 0.30]])

# Four predictions: query 2 sits on object 0, query 0 on object 1.
logits = Tensor(rng.normal(0, 0.1, size=(4, 2)) + [[2, 0], [-2, 0], [2, 0], [-2, 0]])
boxes = np.array([[0.69, 0.61, 0.15, 0.09, 0.29],
                  [0.50, 0.50, 0.30, 0.30, 0.00],
                  [0.31, 0.40, 0.19, 0.10, 0.06],
                  [0.10, 0.90, 0.10, 0.10, 0.40]])
log_probs = T.log_softmax(logits, axis=-1)
vehicle_prob = np.exp(log_probs.data[:, 0])
print("P(vehicle) per query:", vehicle_prob.round(3))

# Rows are ground-truth slots and columns are queries; padding rows cost 0.
cost = cost_matrix(gt, vehicle_prob, boxes)
print("cost matrix:\n", cost.round(3))
print("assignment (slot -> query):", hungarian(cost))

# match() wraps the two steps; the loss uses the assignment it returns.
eta, _ = match(gt, log_probs, Tensor(boxes))
loss, parts = hungarian_loss(gt, log_probs, Tensor(boxes), eta)
print(f"loss={loss.item():.4f}  nll={parts['nll']:.4f}  ciou={parts['ciou']:.4f}  l1={parts['l1']:.4f}")

# Reordering the ground truth only permutes the assignment; the loss is unchanged.
eta2, _ = match(gt[::-1], log_probs, Tensor(boxes))
loss2, _ = hungarian_loss(gt[::-1], log_probs, Tensor(boxes), eta2)
print("loss with reversed ground truth:", loss2.item())
