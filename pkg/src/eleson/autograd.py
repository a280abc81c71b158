"""Reverse-mode automatic differentiation over numpy arrays.

Every op builds a node holding its parents and a closure that pushes the
output gradient back to them.  ``backward`` walks the reachable nodes in
reverse creation order, which is a valid topological order because a node
is always created after its inputs.
"""

from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

DEFAULT_DTYPE = np.float32

_ids = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}")
        self.op = op
        self.shapes = shapes


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _debug_check(arr, op):
    if getattr(_state, "debug", False) and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op} produced non-finite values")


@contextlib.contextmanager
def debug_checks(enabled: bool = True):
    prev = getattr(_state, "debug", False)
    _state.debug = enabled
    try:
        yield
    finally:
        _state.debug = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "node_id", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, _parents=(), op: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op
        self.node_id = next(_ids)

    # -- introspection -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'})"

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)


class Parameter(Tensor):
    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str, trainable: bool = True, dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype)
        self.name = name
        self.trainable = trainable

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def _node(data, parents, op, backward) -> Tensor:
    _debug_check(data, op)
    needs = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype, _parents=parents if needs else (), op=op)
    if needs:
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    if t.grad is None:
        t.grad = g.copy() if g.base is not None or g is t.data else g
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    if not isinstance(a, Tensor):
        a = as_tensor(a, b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, a)
    return a, b


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))
    return _node(out_data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))
    return _node(a.data - b.data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))
    return _node(a.data * b.data, (a, b), "mul", backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * out_data / b.data, b.shape))
    return _node(out_data, (a, b), "div", backward)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), "neg", lambda g: _accumulate(a, -g))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0).astype(a.dtype), (a,), "relu", lambda g: _accumulate(a, g * mask))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), "sigmoid", lambda g: _accumulate(a, g * out * (1 - out)))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), "tanh", lambda g: _accumulate(a, g * (1 - out * out)))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), "exp", lambda g: _accumulate(a, g * out))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), "log", lambda g: _accumulate(a, g / a.data))


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), "square", lambda g: _accumulate(a, 2 * g * a.data))


# -- reductions and shape ops --------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(g, a.shape))
    return _node(np.asarray(out, dtype=a.dtype), (a,), "sum", backward)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _node(out, (a,), "reshape", lambda g: _accumulate(a, g.reshape(a.shape)))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _node(a.data.transpose(axes), (a,), "transpose", lambda g: _accumulate(a, g.transpose(inv)))


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a: Tensor, idx) -> Tensor:
    if isinstance(idx, Tensor):
        idx = idx.data
    out = a.data[idx]
    basic = _is_basic(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        _accumulate(a, full)
    return _node(np.array(out, dtype=a.dtype, copy=not basic) if np.ndim(out) == 0 else out, (a,), "slice", backward)


slice_ = getitem


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(s != r for i, (s, r) in enumerate(zip(t.shape, tensors[0].shape)) if i != ax):
            raise ShapeError("concat", *[t.shape for t in tensors])
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                _accumulate(t, g[tuple(sl)])
    return _node(out, tuple(tensors), "concat", backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a`` of shape (..., n, k) times a 2-D ``b`` (k, m), or two 2-D operands."""
    a, b = _pair(a, b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            _accumulate(b, a2.T @ g.reshape(-1, b.shape[1]))
    return _node(out, (a, b), "matmul", backward)


# -- losses and statistics -----------------------------------------------------

def _check_targets(op, logits, targets):
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or targets.shape[0] != logits.shape[0]:
        raise ShapeError(op, logits.shape, targets.shape)
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ValueError(f"{op}: target class out of range")
    return targets


def log_softmax_np(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_np(x: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax_np(x))


def softmax_cross_entropy(logits: Tensor, targets, reduction: str = "sum") -> Tensor:
    """Cross-entropy of softmax(logits) against integer class targets.

    ``logits`` is (B, K); a 1-D logit vector is treated as a batch of one.
    """
    if logits.ndim == 1:
        logits = reshape(logits, (1, -1))
    targets = _check_targets("softmax_cross_entropy", logits, targets)
    logp = log_softmax_np(logits.data)
    rows = np.arange(targets.size)
    per_item = -logp[rows, targets]
    probs = np.exp(logp)

    if reduction == "none":
        def backward(g):
            d = probs.copy()
            d[rows, targets] -= 1
            _accumulate(logits, d * g[:, None])
        return _node(per_item.astype(logits.dtype), (logits,), "softmax_ce", backward)

    scale = 1.0 / max(targets.size, 1) if reduction == "mean" else 1.0
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    total = per_item.sum() * scale

    def backward(g):
        d = probs.copy()
        d[rows, targets] -= 1
        _accumulate(logits, d * (g * scale))
    return _node(np.asarray(total, dtype=logits.dtype), (logits,), "softmax_ce", backward)


def mse(pred: Tensor, target, axis=None) -> Tensor:
    """Mean squared error, averaged over ``axis`` (all axes by default)."""
    pred, target = _pair(pred, target)
    if pred.shape != target.shape:
        raise ShapeError("mse", pred.shape, target.shape)
    return tmean(square(pred - target), axis)


def population_variance(x: Tensor, axis=0, keepdims: bool = False) -> Tensor:
    """Population (1/n) variance along ``axis``."""
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[ax] for ax in axes]))
    centered = x.data - x.data.mean(axis=axes, keepdims=True)
    out = (centered * centered).mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(x, g * centered * (2.0 / n))
    return _node(np.asarray(out, dtype=x.dtype), (x,), "variance", backward)


def gaussian_noise_add(x: Tensor, std: float, rng: np.random.Generator | int | None = None) -> Tensor:
    if std == 0:
        return x
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    noise = rng.normal(0.0, std, size=x.shape).astype(x.dtype)
    return _node(x.data + noise, (x,), "noise", lambda g: _accumulate(x, g))


# -- convolution ---------------------------------------------------------------

def _im2col(xp: np.ndarray, K: int, stride: int, L_out: int) -> np.ndarray:
    # xp: (B, Lp, C) -> (B, L_out, K*C), tap-major
    B, Lp, C = xp.shape
    s0, s1, s2 = xp.strides
    view = np.lib.stride_tricks.as_strided(xp, (B, L_out, K, C), (s0, s1 * stride, s1, s2), writeable=False)
    # contiguous copy: matmul on the overlapping view skips BLAS and is ~100x slower
    return np.ascontiguousarray(view).reshape(B, L_out, K * C)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution over (B, L, C_in) with weight (K, C_in, C_out)."""
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ShapeError("conv1d", x.shape, weight.shape)
    K, C, O = weight.shape
    if K % 2 == 0:
        raise ShapeError("conv1d (kernel width must be odd)", weight.shape)
    B, L, _ = x.shape
    Lp = L + 2 * padding
    L_out = (Lp - K) // stride + 1
    if L_out < 1:
        raise ShapeError("conv1d", x.shape, weight.shape)
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0))) if padding else x.data
    cols = _im2col(np.ascontiguousarray(xp), K, stride, L_out)
    W2 = weight.data.reshape(K * C, O)
    out = cols @ W2
    if bias is not None:
        out = out + bias.data

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if weight.requires_grad:
            _accumulate(weight, (cols.reshape(-1, K * C).T @ g.reshape(-1, O)).reshape(K, C, O))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.reshape(-1, O).sum(axis=0))
        if x.requires_grad:
            dcols = (g @ W2.T).reshape(B, L_out, K, C)
            dxp = np.zeros((B, Lp, C), dtype=x.dtype)
            for k in range(K):
                dxp[:, k:k + stride * (L_out - 1) + 1:stride, :] += dcols[:, :, k, :]
            _accumulate(x, dxp[:, padding:padding + L, :] if padding else dxp)
    return _node(out.astype(x.dtype, copy=False), parents, "conv1d", backward)


def convlstm_step(x: Tensor, h: Tensor, c: Tensor, weight: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """One ConvLSTM update; gate pre-activations are a same-padded conv of [x, h].

    ``weight`` is (K, C_in + H, 4H) with gate blocks ordered input, forget,
    output, candidate.
    """
    H = h.shape[-1]
    if weight.shape[2] != 4 * H or c.shape != h.shape:
        raise ShapeError("convlstm_step", x.shape, h.shape, c.shape, weight.shape)
    gates = conv1d(concat([x, h], axis=-1), weight, bias, padding=weight.shape[0] // 2)
    i = sigmoid(gates[..., 0:H])
    f = sigmoid(gates[..., H:2 * H])
    o = sigmoid(gates[..., 2 * H:3 * H])
    cand = tanh(gates[..., 3 * H:4 * H])
    c_new = f * c + i * cand
    h_new = o * tanh(c_new)
    return h_new, c_new


# -- backward ------------------------------------------------------------------

def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Populate ``.grad`` on every tensor reachable from a scalar ``loss``."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.node_id in nodes:
            continue
        nodes[t.node_id] = t
        stack.extend(p for p in t._parents if p.requires_grad)
    loss.grad = np.ones_like(loss.data)
    for nid in sorted(nodes, reverse=True):
        t = nodes[nid]
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)
        if not retain_graph and t._parents:
            t._parents = ()
            t._backward = None
            t.grad = None if t is not loss else t.grad
