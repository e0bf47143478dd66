"""Dense tensors with reverse-mode automatic differentiation on numpy storage.

Values live in row-major ndarrays (float32 for training, float64 for gradient
checking). Each differentiable operation appends a tape node carrying its
input tensors and a vector-Jacobian callback; ``Tensor.backward`` replays the
reachable tape once in reverse execution order, which is a valid reverse
topological order because an op can only consume tensors produced earlier.

Reductions use numpy's fixed sequential evaluation, so repeated runs over
identical inputs are bit-identical. The tape is confined to a single thread.
"""

import itertools
from contextlib import contextmanager

import numpy as np

_SEQ = itertools.count()
_GRAD_ENABLED = True

DEFAULT_DTYPE = np.float32


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class TapeNode:
    """One executed differentiable op: inputs and how to push gradients back."""

    __slots__ = ("inputs", "vjp", "seq")

    def __init__(self, inputs, vjp):
        self.inputs = inputs
        self.vjp = vjp
        self.seq = next(_SEQ)


class Tensor:
    """N-dimensional array with optional gradient accumulation.

    ``data`` is the forward value, ``grad`` (same shape, or None) accumulates
    backward contributions, ``node`` links into the tape when this tensor was
    produced by a recorded op.
    """

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, dtype=None, requires_grad=False):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if not arr.flags["C_CONTIGUOUS"]:  # ascontiguousarray would upgrade 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None

    # -- construction -----------------------------------------------------

    @staticmethod
    def from_op(data, inputs, vjp):
        """Wrap an op result; records a tape node when grads are live."""
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.node = None
        out.requires_grad = False
        if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out.node = TapeNode(inputs, vjp)
        return out

    # -- bookkeeping --------------------------------------------------------

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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- backward -----------------------------------------------------------

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable ``requires_grad`` tensor.

        Visits each tape node exactly once, in decreasing execution order.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ValueError("seed gradient shape must match the output shape")

        tape = collect_tape(self)
        self.grad = grad if self.grad is None else self.grad + grad
        for tensor, node in reversed(tape):
            g = tensor.grad
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                inp.grad = gi if inp.grad is None else inp.grad + gi

    # -- operator sugar -------------------------------------------------------

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

    def __getitem__(self, key):
        return slice_view(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def collect_tape(root: Tensor):
    """Reachable (tensor, node) pairs from ``root`` in execution order."""
    entries = []
    seen = set()
    stack = [root]
    while stack:
        t = stack.pop()
        node = t.node
        if node is None or id(node) in seen:
            continue
        seen.add(id(node))
        entries.append((t, node))
        stack.extend(node.inputs)
    entries.sort(key=lambda pair: pair[1].seq)
    return entries


# -- helpers -----------------------------------------------------------------


def astensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, inverting numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _reduction_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(grad: np.ndarray, shape, axes, keepdims):
    if not keepdims:
        for ax in sorted(axes):
            grad = np.expand_dims(grad, ax)
    return np.broadcast_to(grad, shape)


# -- elementwise ops ----------------------------------------------------------


def add(a, b) -> Tensor:
    a = astensor(a, like=b if isinstance(b, Tensor) else None)
    b = astensor(b, like=a)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor.from_op(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a = astensor(a, like=b if isinstance(b, Tensor) else None)
    b = astensor(b, like=a)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor.from_op(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a = astensor(a, like=b if isinstance(b, Tensor) else None)
    b = astensor(b, like=a)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return Tensor.from_op(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a = astensor(a, like=b if isinstance(b, Tensor) else None)
    b = astensor(b, like=a)
    out = a.data / b.data

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return Tensor.from_op(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


# -- contractions and reductions ----------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; trailing two axes contract, batch dims broadcast."""
    a, b = astensor(a), astensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have at least 2 dimensions")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul inner extents disagree: {a.data.shape} x {b.data.shape}"
        )
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor.from_op(out, (a, b), vjp)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _reduction_axes(axis, a.data.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        return (_expand_reduced(g, a.data.shape, axes, keepdims).copy(),)

    return Tensor.from_op(np.asarray(out), (a,), vjp)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _reduction_axes(axis, a.data.ndim)
    count = int(np.prod([a.data.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        return (_expand_reduced(g, a.data.shape, axes, keepdims) / count,)

    return Tensor.from_op(np.asarray(out), (a,), vjp)


# -- shape ops -----------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return Tensor.from_op(out, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = a.data.transpose(axes)
    return Tensor.from_op(out, (a,), lambda g: (g.transpose(inverse),))


def concatenate(tensors, axis=0) -> Tensor:
    tensors = [astensor(t) for t in tensors]
    axis = axis % tensors[0].data.ndim
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return Tensor.from_op(out, tuple(tensors), vjp)


def slice_view(a: Tensor, key) -> Tensor:
    out = a.data[key]
    if np.isscalar(out) or out.ndim == 0:
        out = np.asarray(out)

    def vjp(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return Tensor.from_op(np.ascontiguousarray(out), (a,), vjp)


# -- softmax family -------------------------------------------------------------


def softmax(a, axis=-1) -> Tensor:
    """Max-shifted softmax along ``axis``; rows sum to 1, outputs in [0, 1]."""
    a = astensor(a)
    ax = axis % a.data.ndim
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=ax, keepdims=True)
        return (out * (g - inner),)

    return Tensor.from_op(out, (a,), vjp)


def log_softmax(a: Tensor, axis=-1) -> Tensor:
    ax = axis % a.data.ndim
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=ax, keepdims=True))

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=ax, keepdims=True),)

    return Tensor.from_op(out, (a,), vjp)


# -- selection ops ---------------------------------------------------------------


def topk_indices(x, k: int) -> np.ndarray:
    """Indices of the k largest entries of a 1-D array.

    Ties break toward the smaller index; the result is sorted ascending.
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if data.ndim != 1:
        raise ValueError("topk_indices expects a 1-D input")
    n = data.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for length-{n} input")
    order = np.argsort(-data, kind="stable")[:k]
    return np.sort(order).astype(np.int64)


def topk_indices_lastaxis(data: np.ndarray, k: int) -> np.ndarray:
    """Batched ``topk_indices`` along the last axis of a plain ndarray."""
    n = data.shape[-1]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for extent-{n} axis")
    order = np.argsort(-data, axis=-1, kind="stable")[..., :k]
    return np.sort(order, axis=-1).astype(np.int64)


def index_select(a: Tensor, indices, axis0_only=True) -> Tensor:
    """Select rows of axis 0 by index; duplicates allowed.

    Backward scatters gradients additively onto the selected rows.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("index_select expects a 1-D index list")
    n = a.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"index out of range for axis of extent {n}")
    out = a.data[idx]

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor.from_op(np.ascontiguousarray(out), (a,), vjp)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Copy rows of a [n, ...] tensor in ``indices`` order."""
    return index_select(x, indices)
