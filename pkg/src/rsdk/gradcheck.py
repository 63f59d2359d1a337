"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def rel_error(analytic, numeric) -> float:
    """max|a - n| scaled by the larger of max|a|, max|n| (floored at 1e-12)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-12)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def numeric_grad(f, x: Tensor, h=1e-5, indices=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``x.data``.

    ``indices`` restricts the probe to a subset of flat positions; the
    returned array holds the estimates at those positions in order.
    """
    flat = x.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = []
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            out.append((fp - fm) / (2.0 * h))
    return np.array(out)


def check(f, tensors, h=1e-5, max_probes=None, rng=None):
    """Compare backward() against finite differences for every tensor.

    Returns the worst relative error over all probed tensors. ``f`` must
    rebuild the graph on each call.
    """
    for t in tensors:
        t.grad = None
    f().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    for t, g in zip(tensors, analytic):
        n = t.size
        if max_probes is not None and n > max_probes:
            rng = rng or np.random.default_rng(0)
            idx = np.sort(rng.choice(n, size=max_probes, replace=False))
        else:
            idx = np.arange(n)
        num = numeric_grad(f, t, h, idx)
        worst = max(worst, rel_error(g.reshape(-1)[idx], num))
    return worst
