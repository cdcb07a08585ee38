"""Dense float32 arrays with reverse-mode automatic differentiation.

The compute graph is implicit: every tensor produced by an operation keeps
references to the parents that require gradients, together with one
vector-Jacobian closure per tracked parent. ``backward`` topologically sorts
that DAG once and sweeps it in reverse, accumulating gradients additively
across fan-out. Closures never mutate the gradient arrays they receive, and
accumulation is out-of-place, so gradient buffers may be shared safely.

Data is float32 by default. Float64 is accepted so the test suite can run
the identical forward code at higher precision for finite-difference checks.
A graph must stay on one thread between forward and backward; tensors with
no recorded parents are plain arrays and move freely.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DegenerateInputError,
    DomainError,
    GraphError,
    ShapeError,
)

_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference paths)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


class Tensor:
    """A dense array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjps: tuple[Callable[[np.ndarray], np.ndarray], ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def numpy(self) -> np.ndarray:
        return self.data

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -float(other))

    def __rsub__(self, other):
        return shift(neg(self), float(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- convenience methods ------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes) -> "Tensor":
        return transpose(self, axes)

    def relu(self) -> "Tensor":
        return relu(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


def _result(data: np.ndarray, parents: Sequence[Tensor], vjps: Sequence[Callable]) -> Tensor:
    """Build an op output, recording only parents that require gradients."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    tracked = [(p, v) for p, v in zip(parents, vjps) if p.requires_grad]
    if _GRAD_ENABLED[-1] and tracked:
        out.requires_grad = True
        out._parents = tuple(p for p, _ in tracked)
        out._vjps = tuple(v for _, v in tracked)
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjps = ()
    return out


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ops ---------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data + b.data
    return _result(out, (a, b), (
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(g, b.data.shape),
    ))


def sub(a: Tensor, b: Tensor) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data - b.data
    return _result(out, (a, b), (
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(-g, b.data.shape),
    ))


def mul(a: Tensor, b: Tensor) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data * b.data
    return _result(out, (a, b), (
        lambda g: _unbroadcast(g * b.data, a.data.shape),
        lambda g: _unbroadcast(g * a.data, b.data.shape),
    ))


def div(a: Tensor, b: Tensor) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data / b.data
    return _result(out, (a, b), (
        lambda g: _unbroadcast(g / b.data, a.data.shape),
        lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
    ))


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a plain scalar (no broadcast node)."""
    c = float(c)
    return _result(x.data * c, (x,), (lambda g: g * c,))


def shift(x: Tensor, c: float) -> Tensor:
    """Add a plain scalar."""
    return _result(x.data + float(c), (x,), (lambda g: g,))


def neg(x: Tensor) -> Tensor:
    return _result(-x.data, (x,), (lambda g: -g,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, x.data.dtype.type(0))
    return _result(out, (x,), (lambda g: g * mask,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _result(out, (x,), (lambda g: g * out,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        worst = float(np.min(x.data))
        raise DomainError(f"log requires strictly positive input, min value {worst}")
    out = np.log(x.data)
    return _result(out, (x,), (lambda g: g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise DomainError("sqrt requires non-negative input")
    out = np.sqrt(x.data)
    return _result(out, (x,), (lambda g: g * 0.5 / out,))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    floor = float(floor)
    mask = x.data > floor
    out = np.where(mask, x.data, x.data.dtype.type(floor))
    return _result(out, (x,), (lambda g: g * mask,))


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data
    return _result(out, (a, b), (
        lambda g: g @ b.data.T,
        lambda g: a.data.T @ g,
    ))


def conv2d(x: Tensor, kernels: Tensor) -> Tensor:
    """Temporal cross-correlation with kernels of shape [C_out, C_in, 1, 3].

    The kernel spans 1 along the sensor axis and 3 along the temporal axis,
    with same-padding so the output width equals the input width. Accepts
    [C_in, H, W] or batched [B, C_in, H, W] input.
    """
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    kd = kernels.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d expects 3D or 4D input, got shape {x.data.shape}")
    if kd.ndim != 4 or kd.shape[2] != 1 or kd.shape[3] != 3:
        raise ShapeError(f"conv2d kernels must have shape [C_out, C_in, 1, 3], got {kd.shape}")
    batch, c_in, height, width = xd.shape
    c_out, kc_in, _, ktime = kd.shape
    if kc_in != c_in:
        raise ShapeError(f"conv2d channel mismatch: input {xd.shape} vs kernels {kd.shape}")
    if width < 1:
        raise DegenerateInputError("conv2d requires temporal width >= 1")

    pad = ktime // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (0, 0), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, ktime, axis=3)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4)).reshape(
        batch * height * width, c_in * ktime)
    wmat = kd.reshape(c_out, c_in * ktime)
    out = (cols @ wmat.T).reshape(batch, height, width, c_out).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    if squeeze:
        out = out[0]

    def vjp_x(g: np.ndarray) -> np.ndarray:
        gd = g[None] if squeeze else g
        gcols = np.ascontiguousarray(gd.transpose(0, 2, 3, 1)).reshape(-1, c_out)
        dcols = (gcols @ wmat).reshape(batch, height, width, c_in, ktime)
        dcols = dcols.transpose(0, 3, 1, 2, 4)
        dxp = np.zeros_like(xp)
        for k in range(ktime):
            dxp[..., k:k + width] += dcols[..., k]
        dx = dxp[..., pad:pad + width]
        return dx[0] if squeeze else dx

    def vjp_k(g: np.ndarray) -> np.ndarray:
        gd = g[None] if squeeze else g
        gcols = np.ascontiguousarray(gd.transpose(0, 2, 3, 1)).reshape(-1, c_out)
        return (gcols.T @ cols).reshape(kd.shape)

    return _result(out, (x, kernels), (vjp_x, vjp_k))


def maxpool_temporal(x: Tensor, window: int = 2) -> Tensor:
    """Max over non-overlapping temporal windows on the last axis.

    A trailing remainder narrower than ``window`` is dropped. Gradient flows
    to the first maximal element of each window (numpy argmax tie rule).
    """
    width = x.data.shape[-1]
    if width < window:
        raise DegenerateInputError(
            f"maxpool_temporal needs width >= {window}, got {width}")
    out_w = width // window
    lead = x.data.shape[:-1]
    pairs = x.data[..., :out_w * window].reshape(*lead, out_w, window)
    idx = pairs.argmax(axis=-1)
    out = np.take_along_axis(pairs, idx[..., None], axis=-1)[..., 0]

    def vjp(g: np.ndarray) -> np.ndarray:
        dpairs = np.zeros_like(pairs)
        np.put_along_axis(dpairs, idx[..., None], g[..., None], axis=-1)
        dx = np.zeros_like(x.data)
        dx[..., :out_w * window] = dpairs.reshape(*lead, out_w * window)
        return dx

    return _result(out, (x,), (vjp,))


# -- reductions --------------------------------------------------------------

def _normalize_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"reduce axis {ax} out of range for rank {ndim}")
        norm.append(ax % ndim)
    return tuple(sorted(set(norm)))


def _reduced_count(shape: tuple[int, ...], axes) -> int:
    if axes is None:
        return int(np.prod(shape)) if shape else 1
    n = 1
    for ax in axes:
        n *= shape[ax]
    return n


def _expand_like(g: np.ndarray, shape: tuple[int, ...], axes, keepdims: bool) -> np.ndarray:
    if not keepdims:
        if axes is None:
            g = g.reshape((1,) * len(shape))
        else:
            g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axis(axis, x.data.ndim)
    if _reduced_count(x.data.shape, axes) == 0:
        raise DegenerateInputError("sum over an empty extent")
    out = x.data.sum(axis=axes, keepdims=keepdims)
    shape = x.data.shape

    def vjp(g: np.ndarray) -> np.ndarray:
        return _expand_like(g, shape, axes, keepdims).copy()

    return _result(np.asarray(out), (x,), (vjp,))


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axis(axis, x.data.ndim)
    count = _reduced_count(x.data.shape, axes)
    if count == 0:
        raise DegenerateInputError("mean over an empty extent")
    out = x.data.mean(axis=axes, keepdims=keepdims)
    shape = x.data.shape

    def vjp(g: np.ndarray) -> np.ndarray:
        return _expand_like(g, shape, axes, keepdims) / count

    return _result(np.asarray(out), (x,), (vjp,))


# -- shape ops ---------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = x.data.shape
    out = x.data.reshape(shape)
    return _result(out, (x,), (lambda g: g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = x.data.transpose(axes)
    return _result(out, (x,), (lambda g: g.transpose(inverse),))


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries from ``start`` along one axis."""
    if not 0 <= start <= start + length <= x.data.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}] out of bounds for axis {axis} "
            f"of shape {x.data.shape}")
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = np.ascontiguousarray(x.data[sl])

    def vjp(g: np.ndarray) -> np.ndarray:
        dx = np.zeros_like(x.data)
        dx[sl] = g
        return dx

    return _result(out, (x,), (vjp,))


# -- composite ops -------------------------------------------------------------

def cosine_similarity(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """Cosine similarity along the last axis; scalar for 1D inputs.

    Norms are clamped at ``eps`` instead of raising on zero vectors, so the
    output stays defined, bounded in [-1, 1], and differentiable (the clamp
    zeroes the norm gradient below the floor).
    """
    dot = reduce_sum(mul(a, b), axis=-1)
    na = sqrt(clamp_min(reduce_sum(mul(a, a), axis=-1), eps * eps))
    nb = sqrt(clamp_min(reduce_sum(mul(b, b), axis=-1), eps * eps))
    return div(dot, mul(na, nb))


# -- backward ------------------------------------------------------------------

def graph_nodes(root: Tensor) -> list[Tensor]:
    """Tensors reachable from ``root`` in topological order, parents first."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar root, populating ``.grad`` on the graph.

    Gradients accumulate additively across fan-out and across repeated
    backward calls; trainers reset leaves between steps.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward root must be scalar, got shape {loss.data.shape}")
    order = graph_nodes(loss)
    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.astype(node.data.dtype, copy=False)
        else:
            node.grad = node.grad + g.astype(node.data.dtype, copy=False)
        for parent, vjp in zip(node._parents, node._vjps):
            contrib = vjp(g)
            pid = id(parent)
            if pid in flowing:
                flowing[pid] = flowing[pid] + contrib
            else:
                flowing[pid] = contrib
