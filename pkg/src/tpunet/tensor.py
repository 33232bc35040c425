"""Reverse-mode autodiff over float64 numpy arrays.

A module-level tape records every operation whose inputs require
gradients; ``backward`` replays it once in reverse order. All tensors
are float64 and C-contiguous. Forward results are checked for NaN/Inf,
so overflow surfaces as an error instead of a silent value.
"""

from __future__ import annotations

import contextlib
from typing import Optional, Sequence

import numpy as np

from . import kernels


class TensorError(Exception):
    pass


class ShapeError(TensorError):
    pass


class DomainError(TensorError):
    """Input outside an operation's domain (log of a non-positive value, ...)."""


class NumericError(TensorError):
    """A forward result contained NaN or Inf."""


class TapeError(TensorError):
    pass


def _as_f64(data) -> np.ndarray:
    """Contiguous float64 view/copy that keeps 0-d arrays 0-d
    (np.ascontiguousarray would promote them to shape (1,))."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """N-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f64(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}{flag})"

    # arithmetic sugar; scalars are promoted to constant tensors
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("inputs", "output", "backward_fn", "name")

    def __init__(self, inputs, output, backward_fn, name):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.name = name


class Tape:
    """Execution-ordered operation record; inputs always precede their node."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def clear(self):
        self.nodes.clear()
        self.consumed = False


_TAPE = Tape()
_GRAD_ENABLED = True


def active_tape() -> Tape:
    return _TAPE


def reset_tape():
    """Drop all recorded nodes and re-arm the tape for the next backward."""
    _TAPE.clear()


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation, finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def apply_op(inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn, name: str) -> Tensor:
    """Wrap a forward result and record its backward rule on the tape.

    ``backward_fn(grad_out)`` must return one gradient array (or None)
    per input, in order. This is also the extension point for custom ops.
    """
    out_data = _as_f64(out_data)
    if not np.all(np.isfinite(out_data)):
        raise NumericError(f"{name}: non-finite values in forward result")
    requires = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    if requires:
        _TAPE.nodes.append(_Node(tuple(inputs), out, backward_fn, name))
    return out


def backward(loss: Tensor):
    """Populate ``grad`` on every tensor the scalar ``loss`` depends on."""
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TapeError("loss is detached: it does not depend on any tensor requiring grad")
    if _TAPE.consumed:
        raise TapeError("tape already consumed by a previous backward; call reset_tape() first")
    if not any(node.output is loss for node in _TAPE.nodes):
        raise TapeError("loss was not produced on the active tape")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(_TAPE.nodes):
        gout = node.output.grad
        if gout is None:
            continue
        grads = node.backward_fn(gout)
        for inp, g in zip(node.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = np.zeros_like(inp.data)
            inp.grad += g
    _TAPE.consumed = True


def _ensure_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to ``shape``, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# binary elementwise


def add(a, b) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    out = a.data + b.data

    def bwd(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return apply_op((a, b), out, bwd, "add")


def sub(a, b) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    out = a.data - b.data

    def bwd(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return apply_op((a, b), out, bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return apply_op((a, b), out, bwd, "mul")


def div(a, b) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    if np.any(b.data == 0.0):
        raise DomainError("div: division by zero")
    out = a.data / b.data

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return apply_op((a, b), out, bwd, "div")


# ---------------------------------------------------------------------------
# unary elementwise


def neg(x) -> Tensor:
    x = _ensure_tensor(x)
    return apply_op((x,), -x.data, lambda g: (-g,), "neg")


def relu(x) -> Tensor:
    x = _ensure_tensor(x)
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        # subgradient at 0 is 0
        return (g * (x.data > 0.0),)

    return apply_op((x,), out, bwd, "relu")


def sigmoid(x) -> Tensor:
    x = _ensure_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return apply_op((x,), out, bwd, "sigmoid")


def exp(x) -> Tensor:
    x = _ensure_tensor(x)
    out = np.exp(x.data)

    def bwd(g):
        return (g * out,)

    return apply_op((x,), out, bwd, "exp")


def log(x) -> Tensor:
    x = _ensure_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log: input must be strictly positive")
    out = np.log(x.data)

    def bwd(g):
        return (g / x.data,)

    return apply_op((x,), out, bwd, "log")


def square(x) -> Tensor:
    x = _ensure_tensor(x)
    out = x.data * x.data

    def bwd(g):
        return (2.0 * g * x.data,)

    return apply_op((x,), out, bwd, "square")


def sqrt(x) -> Tensor:
    x = _ensure_tensor(x)
    if np.any(x.data < 0.0):
        raise DomainError("sqrt: input must be non-negative")
    out = np.sqrt(x.data)

    def bwd(g):
        return (g * 0.5 / out,)

    return apply_op((x,), out, bwd, "sqrt")


def clip(x, lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero where the clamp is active."""
    x = _ensure_tensor(x)
    out = np.clip(x.data, lo, hi)

    def bwd(g):
        keep = np.ones_like(x.data, dtype=bool)
        if lo is not None:
            keep &= x.data > lo
        if hi is not None:
            keep &= x.data < hi
        return (g * keep,)

    return apply_op((x,), out, bwd, "clip")


# ---------------------------------------------------------------------------
# matmul / softmax


def _swap_last(m: np.ndarray) -> np.ndarray:
    return np.swapaxes(m, -1, -2)


def matmul(a, b) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as err:
        raise ShapeError(f"matmul batch dimensions incompatible: {a.shape} x {b.shape}") from err

    def bwd(g):
        ga = _unbroadcast(np.matmul(g, _swap_last(b.data)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(_swap_last(a.data), g), b.shape) if b.requires_grad else None
        return ga, gb

    return apply_op((a, b), out, bwd, "matmul")


def softmax(x, axis: int, mask: Optional[np.ndarray] = None) -> Tensor:
    """Stable softmax along ``axis``; masked-out positions get exactly zero weight.

    ``mask`` is a boolean array broadcastable to ``x`` with True marking
    positions that participate. A slice with every position masked out
    is a domain error.
    """
    x = _ensure_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    if mask is None:
        m = x.data.max(axis=axis, keepdims=True)
        e = np.exp(x.data - m)
    else:
        mask_b = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        neg = np.where(mask_b, x.data, -np.inf)
        m = neg.max(axis=axis, keepdims=True)
        if not np.all(np.isfinite(m)):
            raise DomainError("softmax: a slice along the axis is fully masked")
        e = np.where(mask_b, np.exp(neg - m), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    y = e / s

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return apply_op((x,), y, bwd, "softmax")


# ---------------------------------------------------------------------------
# convolution / pooling / upsampling


def conv2d(x, kernel, bias=None, padding: str = "same") -> Tensor:
    """2D cross-correlation with zero padding (no kernel flip)."""
    x, kernel = _ensure_tensor(x), _ensure_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects (B,C,H,W) and (Cout,Cin,kh,kw), got {x.shape} and {kernel.shape}")
    B, C, H, W = x.shape
    Cout, Cin, kh, kw = kernel.shape
    if C != Cin:
        raise ShapeError(f"conv2d channel mismatch: input has {C}, kernel expects {Cin}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"same-padding requires odd kernel dims, got {kh}x{kw}")
        pad = (kh // 2, kw // 2)
    elif padding == "valid":
        if H < kh or W < kw:
            raise ShapeError(f"valid conv kernel {kh}x{kw} larger than input {H}x{W}")
        pad = (0, 0)
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    if bias is not None:
        bias = _ensure_tensor(bias)
        if bias.shape != (Cout,):
            raise ShapeError(f"conv2d bias shape {bias.shape} does not match Cout={Cout}")
    # keep the im2col buffer for the kernel-gradient GEMM when a backward
    # pass can happen; rebuilding it is the hottest data movement in training
    cache_cols = _GRAD_ENABLED and kernel.requires_grad
    if cache_cols:
        out, cols = kernels.conv_forward(x.data, kernel.data, pad, want_cols=True)
    else:
        out, cols = kernels.conv_forward(x.data, kernel.data, pad), None
    if bias is not None:
        out = out + bias.data[:, None, None]
    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def bwd(g):
        need_x = x.requires_grad
        need_w = kernel.requires_grad
        gx, gw = kernels.conv_backward(x.data, kernel.data, g, pad, need_x, need_w, cols)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)) if bias.requires_grad else None)
        return grads

    return apply_op(inputs, out, bwd, "conv2d")


def maxpool2(x) -> Tensor:
    """2x2 max pooling, stride 2; ties route to the first window element."""
    x = _ensure_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2 expects (B,C,H,W), got {x.shape}")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {H}x{W}")
    out, idx = kernels.maxpool2_forward(x.data)

    def bwd(g):
        return (kernels.maxpool2_backward(g, idx),)

    return apply_op((x,), out, bwd, "maxpool2")


def upsample_nearest2(x) -> Tensor:
    """Nearest-neighbour 2x upsampling; backward sums each 2x2 block."""
    x = _ensure_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest2 expects (B,C,H,W), got {x.shape}")
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bwd(g):
        return (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return apply_op((x,), out, bwd, "upsample_nearest2")


# ---------------------------------------------------------------------------
# structural


def concat(tensors: Sequence, axis: int) -> Tensor:
    ts = [_ensure_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty sequence")
    nd = ts[0].ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"concat axis {axis} invalid for rank {nd}")
    axis = axis % nd
    ref = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != nd or any(o != r for i, (o, r) in enumerate(zip(other, ref)) if i != axis):
            raise ShapeError(f"concat shapes incompatible off axis {axis}: "
                             f"{[tuple(t.shape) for t in ts]}")
    sizes = [t.shape[axis] for t in ts]
    out = np.concatenate([t.data for t in ts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        grads = []
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * nd
                sl[axis] = slice(lo, hi)
                grads.append(np.ascontiguousarray(g[tuple(sl)]))
            else:
                grads.append(None)
        return grads

    return apply_op(tuple(ts), out, bwd, "concat")


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    """View [start, stop) along one axis; backward scatters into zeros."""
    x = _ensure_tensor(x)
    nd = x.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"slice axis {axis} invalid for rank {nd}")
    axis = axis % nd
    n = x.shape[axis]
    if not 0 <= start <= stop <= n:
        raise ShapeError(f"slice [{start}:{stop}) out of range for axis size {n}")
    sl = [slice(None)] * nd
    sl[axis] = slice(start, stop)
    out = x.data[tuple(sl)]

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[tuple(sl)] = g
        return (gx,)

    return apply_op((x,), out, bwd, "slice")


def split(x, sizes: Sequence[int], axis: int) -> list:
    """Inverse of concat: cut ``x`` into consecutive chunks along ``axis``."""
    x = _ensure_tensor(x)
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not cover axis {axis} of {x.shape}")
    parts = []
    off = 0
    for s in sizes:
        parts.append(slice_axis(x, axis, off, off + s))
        off += s
    return parts


def reshape(x, shape) -> Tensor:
    x = _ensure_tensor(x)
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from err

    def bwd(g):
        return (g.reshape(x.shape),)

    return apply_op((x,), out, bwd, "reshape")


def transpose(x, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = _ensure_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose axes {axes} invalid for rank {x.ndim}")
    out = np.transpose(x.data, axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.ascontiguousarray(np.transpose(g, inv)),)

    return apply_op((x,), out, bwd, "transpose")


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _ensure_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return apply_op((x,), out, bwd, "reduce_sum")


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _ensure_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return apply_op((x,), out, bwd, "reduce_mean")


def embed_lookup(table, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` by integer ids; backward scatter-adds."""
    table = _ensure_tensor(table)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2D, got {table.shape}")
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("embed_lookup ids must be integers")
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise DomainError(f"embed_lookup id out of range [0, {V})")
    out = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return apply_op((table,), out, bwd, "embed_lookup")
