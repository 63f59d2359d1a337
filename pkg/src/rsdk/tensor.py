"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable op builds an output ``Tensor`` that remembers its
parents and a closure mapping the output gradient to parent gradients.
Each tensor gets a monotonically increasing sequence number at creation,
so the ops reachable from a loss can be replayed in exact reverse
execution order during :meth:`Tensor.backward`.
"""

from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

from .errors import ContractError, DimensionError, NumericalError, ParameterError

_seq = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "_op")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._seq = next(_seq)
        self._op = "leaf"

    # ---- basic properties ----
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    # ---- autodiff ----
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if self.data.size != 1 and grad is None:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() called on a tensor that does not require grad")
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)

        # collect the recorded subgraph
        nodes, stack, seen = [], [self], {id(self)}
        while stack:
            t = stack.pop()
            nodes.append(t)
            for p in t._parents:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
        nodes.sort(key=lambda t: t._seq, reverse=True)

        grads = {id(self): seed}
        for t in nodes:
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t._backward is None:
                t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            for p, pg in zip(t._parents, t._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # ---- operator sugar ----
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    if not np.isfinite(data).all():
        raise NumericalError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._seq = next(_seq)
    out._op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw, "div")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def arctan(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.arctan(a.data), (a,), lambda g: (g / (1.0 + a.data ** 2),), "arctan")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _select(a, b, pick_a, op):
    tie = (a.data == b.data) * 0.5
    wa = pick_a - tie            # exact ties split the gradient evenly
    return _make(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * wa, a.shape),
                            _unbroadcast(g * (1.0 - wa), b.shape)), op)


def maximum(a, b) -> Tensor:
    """Elementwise max; at exact ties each operand receives half the gradient."""
    a, b = as_tensor(a), as_tensor(b)
    return _select(a, b, (a.data >= b.data).astype(np.float64), "maximum")


def minimum(a, b) -> Tensor:
    """Elementwise min; at exact ties each operand receives half the gradient."""
    a, b = as_tensor(a), as_tensor(b)
    return _select(a, b, (a.data <= b.data).astype(np.float64), "minimum")


# ---------------------------------------------------------------- reductions

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = range(a.ndim) if axis is None else np.atleast_1d(axis)
    n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def amax(a, axis, keepdims=False) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis)
        return (full,)

    return _make(out if keepdims else np.squeeze(out, axis), (a,), bw, "amax")


def amin(a, axis, keepdims=False) -> Tensor:
    return -amax(-as_tensor(a), axis, keepdims)


# ---------------------------------------------------------------- shape ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def index(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(a.data[idx], dtype=np.float64), (a,), bw, "index")


def concat(tensors, axis=0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
                s != r for i, (s, r) in enumerate(zip(t.shape, ts[0].shape)) if i != ax):
            raise DimensionError(f"concat: shapes {[t.shape for t in ts]} differ off axis {ax}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def bw(g):
        sl = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[ax] = slice(lo, hi)
            out.append(g[tuple(sl)])
        return tuple(out)

    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, bw, "concat")


def stack(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % (ts[0].ndim + 1)
    return concat([reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in ts], ax)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _make(out, (a, b), bw, "matmul")


# ---------------------------------------------------------------- nn primitives

def softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def log_softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    sm = np.exp(out)

    def bw(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


def layer_norm(x, gain=None, bias=None, axis=-1, eps=1e-5) -> Tensor:
    """Normalize along ``axis`` (population variance), then apply gain/bias.

    ``gain`` and ``bias`` must broadcast against ``x``; for the features-first
    layout ``(..., k, n)`` with ``axis=-2`` they have shape ``(k, 1)``.
    """
    x = as_tensor(x)
    if x.shape[axis] < 2:
        raise DimensionError("layer_norm needs a normalized extent of at least 2")
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc ** 2).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        return (inv * (g - g.mean(axis=axis, keepdims=True)
                       - xhat * (g * xhat).mean(axis=axis, keepdims=True)),)

    y = _make(xhat, (x,), bw, "layer_norm")
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return y


def conv2d(x, w, b=None, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation.

    ``x`` is ``(C_in, H, W)`` or batched ``(B, C_in, H, W)``; ``w`` is
    ``(C_out, C_in, kH, kW)``; ``b`` is ``(C_out,)`` or None.
    """
    x, w = as_tensor(x), as_tensor(w)
    unbatched = x.ndim == 3
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d: bad ranks {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    Co, Ci, kh, kw = w.shape
    if Ci != C:
        raise DimensionError(f"conv2d: input has {C} channels, kernel expects {Ci}")
    s, p = int(stride), int(padding)
    if s < 1 or p < 0:
        raise ParameterError("conv2d: stride must be >= 1 and padding >= 0")
    Hp, Wp = H + 2 * p, W + 2 * p
    if kh > Hp or kw > Wp:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho, Wo = (Hp - kh) // s + 1, (Wp - kw) // s + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = win[:, :, ::s, ::s][:, :, :Ho, :Wo]                     # B,C,Ho,Wo,kh,kw
    out = np.tensordot(cols, w.data, axes=([1, 4, 5], [1, 2, 3]))  # B,Ho,Wo,Co
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def bw_x_w(g):
        gx = gw = None
        if w.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        if x.requires_grad:
            dcols = np.tensordot(g, w.data, axes=([1], [0]))       # B,Ho,Wo,C,kh,kw
            gxp = np.zeros((B, C, Hp, Wp))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, p:p + H, p:p + W] if p else gxp
        return gx, gw

    y = _make(out, (x, w), bw_x_w, "conv2d")
    if b is not None:
        y = y + reshape(as_tensor(b), (Co, 1, 1))
    if unbatched:
        y = reshape(y, y.shape[1:])
    return y


def dropout_mask(shape, p, key) -> np.ndarray:
    """Deterministic keep-mask (already scaled by 1/(1-p)) for ``key``.

    ``key`` is ``(seed, layer_id, step)``; the Philox counter-based generator
    makes every mask a pure function of that triple.
    """
    seed, layer_id, step = (int(k) for k in key)
    # the step sits in the top counter word so streams of nearby steps never overlap
    bitgen = np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, layer_id & 0xFFFFFFFFFFFFFFFF],
                              counter=[0, 0, 0, step & 0xFFFFFFFFFFFFFFFF])
    u = np.random.Generator(bitgen).random(shape)
    return (u >= p) / (1.0 - p)


def dropout(x, p: float, train: bool, key=(0, 0, 0)) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not train or p == 0.0:
        return x
    mask = dropout_mask(x.shape, p, key)
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")
