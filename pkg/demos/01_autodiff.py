"""
Reverse-mode autodiff on numpy arrays
=====================================

Build a small expression graph, run backward(), and compare the analytic
gradients against central finite differences.
"""

import numpy as np

from rsdk import tensor as T
from rsdk.errors import NumericalError
from rsdk.gradcheck import check, numeric_grad
from rsdk.tensor import Tensor

rng = np.random.default_rng(0)

# Leaves that should receive gradients are flagged with requires_grad.
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

# A softmax over a matmul, weighted by a fixed target, reduced to a scalar.
target = rng.normal(size=(3, 2))
loss = (T.softmax(x @ w, axis=-1) * target).sum()
loss.backward()
print("loss:", loss.item())
print("d loss / d w:\n", w.grad)

# The same gradient by central differences (h = 1e-5). The function must
# rebuild the graph on every call.
f = lambda: (T.softmax(x @ w, axis=-1) * target).sum()
print("finite differences:\n", numeric_grad(f, w).reshape(w.shape))

# check() does both and reports the worst relative error over all inputs.
print("max relative error:", check(f, [x, w]))

# Non-finite values never propagate silently: every op checks its output.
try:
    T.log(Tensor([-1.0]))
except NumericalError as exc:
    print("caught:", exc)
