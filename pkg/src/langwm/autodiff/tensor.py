"""Reverse-mode automatic differentiation over numpy arrays.

Design: an eager tape. Every operation computes its result immediately and,
when gradients are enabled and some input requires them, records a closure
that maps the output gradient to input gradients. `Tensor.backward()` does a
topological walk and accumulates gradients into leaf tensors. Repeated
backward calls accumulate into `.grad` without zeroing; optimizers zero after
stepping.

Precision is controlled globally: float64 for gradient checking and tests,
float32 for training runs (see `precision` / `set_default_dtype`).

There is deliberately no graph compiler or kernel fusion; everything stays
inspectable numpy. Convolutions dispatch through `langwm.autodiff.conv`,
which prefers the compiled extension when available.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import ConfigurationError, NumericalError, UsageError
from . import conv as _conv

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True
_DEBUG_CHECKS = False


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigurationError(f"unsupported default dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype ('float32' or 'float64')."""
    global _DEFAULT_DTYPE
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward-only compute)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


@contextlib.contextmanager
def debug_checks(enabled: bool = True):
    """Check every op output (forward and backward) for NaN/Inf."""
    global _DEBUG_CHECKS
    old = _DEBUG_CHECKS
    _DEBUG_CHECKS = enabled
    try:
        yield
    finally:
        _DEBUG_CHECKS = old


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values produced by {where}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._bwd = None
        self._op = "leaf"

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if not (len(shape) == 1 and isinstance(shape[0], (tuple, list))) else shape[0])

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    # -- reverse pass ----------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's `.grad`.

        `self` must hold a single element. Calling backward twice without
        zeroing adds the new gradients on top of the old ones.
        """
        if self.data.size != 1:
            raise UsageError(f"backward requires a scalar loss, got shape {self.data.shape}")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and (p._bwd is not None or p.requires_grad):
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._bwd is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += g
                continue
            if _DEBUG_CHECKS:
                _check_finite(g, f"backward of {node._op}")
            for parent, pg in zip(node._parents, node._bwd(g)):
                if pg is None or (parent._bwd is None and not parent.requires_grad):
                    continue
                prev = grads.get(id(parent))
                # closures may hand the same array to several parents, so
                # accumulation must never mutate a stored gradient in place
                grads[id(parent)] = pg if prev is None else prev + pg


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def constant(x, dtype=None) -> Tensor:
    return _as_tensor(x, dtype)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], bwd, op: str) -> Tensor:
    if _DEBUG_CHECKS:
        _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if _GRAD_ENABLED and any(p.requires_grad or p._bwd is not None for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bwd = bwd
    else:
        out.requires_grad = False
        out._parents = ()
        out._bwd = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(data, (a, b), bwd, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _node(data, (a, b), bwd, "div")


def square(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = a.data * a.data

    def bwd(g):
        return (2.0 * g * a.data,)

    return _node(data, (a,), bwd, "square")


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)

    def bwd(g):
        return (g * data,)

    return _node(data, (a,), bwd, "exp")


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)

    def bwd(g):
        return (g / a.data,)

    return _node(data, (a,), bwd, "log")


def sqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.sqrt(a.data)

    def bwd(g):
        return (g * (0.5 / data),)

    return _node(data, (a,), bwd, "sqrt")


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - data * data),)

    return _node(data, (a,), bwd, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    # stable sigmoid via tanh
    data = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def bwd(g):
        return (g * data * (1.0 - data),)

    return _node(data, (a,), bwd, "sigmoid")


def silu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    sig = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    data = a.data * sig

    def bwd(g):
        return (g * (sig + data * (1.0 - sig)),)

    return _node(data, (a,), bwd, "silu")


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def bwd(g):
        return (g * (a.data > 0),)

    return _node(data, (a,), bwd, "relu")


def softplus(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.logaddexp(0.0, a.data).astype(a.dtype, copy=False)

    def bwd(g):
        return (g * (0.5 * (np.tanh(0.5 * a.data) + 1.0)),)

    return _node(data, (a,), bwd, "softplus")


def maximum(a: Tensor, b) -> Tensor:
    """Elementwise max; the gradient follows the larger input (ties go to `a`)."""
    a, b = _as_tensor(a), _as_tensor(b, _as_tensor(a).dtype)
    data = np.maximum(a.data, b.data)
    take_a = a.data >= b.data

    def bwd(g):
        return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)

    return _node(data, (a, b), bwd, "maximum")


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(_as_tensor(a).data)


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _node(data, (a, b), bwd, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.shape),)

    return _node(data, (a,), bwd, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    a = _as_tensor(a)
    data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        return (np.transpose(g, inv),)

    return _node(data, (a,), bwd, "transpose")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(data, tuple(tensors), bwd, "concat")


def getitem(a: Tensor, idx) -> Tensor:
    a = _as_tensor(a)
    data = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(data, (a,), bwd, "getitem")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: ids of any shape, output shape ids.shape + (E,)."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ConfigurationError(
            f"embedding: id out of range for table with {table.shape[0]} rows"
        )
    data = table.data[ids]

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _node(data, (table,), bwd, "embedding")


def gather_last(a: Tensor, ids: np.ndarray) -> Tensor:
    """out[..., ()] = a[..., ids[...]] along the last axis."""
    a = _as_tensor(a)
    ids = np.asarray(ids)
    if ids.shape != a.shape[:-1]:
        raise ConfigurationError(f"gather_last: ids shape {ids.shape} vs input {a.shape}")
    data = np.take_along_axis(a.data, ids[..., None], axis=-1)[..., 0]

    def bwd(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, ids[..., None], g[..., None], axis=-1)
        return (full,)

    return _node(data, (a,), bwd, "gather_last")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(data, (a,), bwd, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])

    def bwd(g):
        g = np.asarray(g) / count
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(data, (a,), bwd, "mean")


# ---------------------------------------------------------------------------
# normalizations and distributions
# ---------------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _node(data, (a,), bwd, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    probs = np.exp(data)

    def bwd(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _node(data, (a,), bwd, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-3) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ConfigurationError(
            f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs input {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def bwd(g):
        dbias = g.reshape(-1, x.shape[-1]).sum(axis=0)
        dgain = (g * xhat).reshape(-1, x.shape[-1]).sum(axis=0)
        dxhat = g * gain.data
        m = dxhat.mean(axis=-1, keepdims=True)
        mx = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m - xhat * mx) * inv
        return dx, dgain, dbias

    return _node(data, (x, gain, bias), bwd, "layer_norm")


# ---------------------------------------------------------------------------
# convolutions (dispatching to the compiled/numpy kernels)
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Strided 2-D cross-correlation.

    x: (B, Cin, H, W), w: (Cout, Cin, K, K).
    Output spatial size: floor((in + 2*padding - K) / stride) + 1.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ConfigurationError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    data = _conv.forward(x.data, w.data, stride, padding)

    def bwd(g):
        gx = _conv.input_grad(g, w.data, stride, padding, x.shape)
        gw = _conv.weight_grad(x.data, g, stride, padding, w.shape)
        return gx, gw

    return _node(data, (x, w), bwd, "conv2d")


def conv_transpose2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed counterpart of `conv2d`.

    x: (B, Cin, H, W), w: (Cin, Cout, K, K).
    Output spatial size: (in - 1) * stride - 2*padding + K.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ConfigurationError(
            f"conv_transpose2d: incompatible shapes {x.shape} and {w.shape}"
        )
    k = w.shape[2]
    out_h = (x.shape[2] - 1) * stride - 2 * padding + k
    out_w = (x.shape[3] - 1) * stride - 2 * padding + k
    out_shape = (x.shape[0], w.shape[1], out_h, out_w)
    data = _conv.input_grad(x.data, w.data, stride, padding, out_shape)

    def bwd(g):
        gx = _conv.forward(g, w.data, stride, padding)
        gw = _conv.weight_grad(g, x.data, stride, padding, w.shape)
        return gx, gw

    return _node(data, (x, w), bwd, "conv_transpose2d")
