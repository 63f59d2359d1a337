"""Adam with bias correction and per-group learning rates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam update of ``params`` (list of ndarrays).

    ``grads`` entries may be None, which is treated as a zero gradient.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("adam_step: params, grads and state lengths differ")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"adam_step: shapes {p.shape}, {g.shape}, {m.shape} differ")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


@dataclass
class ParamGroup:
    params: list
    lr: float
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.state = AdamState([np.zeros_like(p.data) for p in self.params],
                               [np.zeros_like(p.data) for p in self.params])


class Adam:
    """Adam over named parameter groups of :class:`~rsdk.tensor.Tensor`."""

    def __init__(self, groups: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.groups = {name: ParamGroup(list(ps), lr) for name, (ps, lr) in groups.items()}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def set_lr(self, name, lr):
        self.groups[name].lr = lr

    def lr(self, name):
        return self.groups[name].lr

    def step(self):
        for g in self.groups.values():
            arrays = [p.data for p in g.params]
            adam_step(arrays, [p.grad for p in g.params], g.state, g.lr,
                      self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for g in self.groups.values():
            for p in g.params:
                p.grad = None
