"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation validates its input shapes, checks its output for NaN/Inf,
and (when gradients are enabled and some input requires them) records a
backward rule. ``Tensor.backward()`` walks the recorded graph once in
reverse topological order, accumulating gradients additively over fan-out.

The engine is deliberately small: stride-1 convolutions with symmetric zero
padding, two-dimensional matmul, and the elementwise/reduction ops the rest
of the package needs. Everything is float64 so finite-difference checks can
be tight.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np


class TensorError(ValueError):
    """Shape or domain violation detected before computing an op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf (forward value or backward gradient)."""


_node_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense float64 array, optionally tracked by the autodiff graph.

    ``grad`` is populated (lazily, same shape as ``data``) by ``backward``
    on tensors created with ``requires_grad=True``; repeated backward calls
    accumulate until ``zero_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor constructed from non-finite data")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._id = next(_node_ids)

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
            raise TensorError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- graph traversal ---------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable requires_grad leaf.

        ``self`` must be scalar. Interior gradients live only for the
        duration of the call; leaf ``grad`` buffers persist and add up
        across calls.
        """
        if self.data.size != 1:
            raise TensorError(f"backward() requires a scalar root, got shape {self.shape}")

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None or node._backward is None:
                if g is not None and node.requires_grad and node._backward is None:
                    if not np.all(np.isfinite(g)):
                        raise NonFiniteError(f"non-finite gradient at node {node._id} ({node._op})")
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += g
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient at node {node._id} ({node._op})")
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = pg.copy() if pg.base is not None or pg is g else pg
                else:
                    acc += pg

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents, backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"op '{op}' produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._id = next(_node_ids)
    out._op = op
    if _grad_enabled and any(p.requires_grad or p._backward is not None for p in parents):
        out.requires_grad = False
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad back down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise TensorError(f"op '{op}': shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise binary ----------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    return _make(a.data * b.data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return _make(out, "div", (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


# -- elementwise unary -----------------------------------------------------

def relu(x: Tensor) -> Tensor:
    # gradient at exactly 0 is 0 (subgradient choice)
    return _make(np.maximum(x.data, 0.0), "relu", (x,),
                 lambda g: (g * (x.data > 0.0),))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _make(out, "log", (x,), lambda g: (g / x.data,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, "exp", (x,), lambda g: (g * out,))


def absolute(x: Tensor) -> Tensor:
    return _make(np.abs(x.data), "abs", (x,), lambda g: (g * np.sign(x.data),))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    if lo > hi:
        raise TensorError(f"clamp bounds out of order: {lo} > {hi}")
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), "clamp", (x,), lambda g: (g * inside,))


# -- reductions ------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)
    return _make(np.asarray(out), "sum", (x,),
                 lambda g: (_expand_reduced(g, x.shape, axis, keepdims),))


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for a in axes:
            count *= x.shape[a % x.ndim]
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))
    return _make(out, "mean", (x,),
                 lambda g: (_expand_reduced(g, x.shape, axis, keepdims) / count,))


# -- shape ops ---------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise TensorError(f"op 'reshape': cannot reshape {x.shape} to {shape}") from None
    return _make(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise TensorError("op 'concat': empty input list")
    nd = tensors[0].ndim
    ax = axis % nd
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if t.ndim != nd or base[:ax] != other[:ax] or base[ax + 1:] != other[ax + 1:]:
            raise TensorError(
                f"op 'concat': shape {t.shape} incompatible with {tensors[0].shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        sl = [slice(None)] * nd
        outs = []
        for i in range(len(tensors)):
            sl[ax] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return _make(np.concatenate([t.data for t in tensors], axis=ax), "concat", tensors, backward)


def slice_(x: Tensor, key) -> Tensor:
    if not isinstance(key, tuple):
        key = (key,)
    for k in key:
        if not isinstance(k, slice) or (k.step not in (None, 1)):
            raise TensorError("op 'slice': only contiguous slices are supported")

    def backward(g):
        full = np.zeros_like(x.data)
        full[key] = g
        return (full,)

    return _make(x.data[key].copy(), "slice", (x,), backward)


# -- matmul ------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise TensorError(f"op 'matmul': expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise TensorError(f"op 'matmul': inner dims disagree: {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, "matmul", (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


# -- convolution / pooling ---------------------------------------------------

def _im2col(padded: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Window matrix (N, C*kh*kw, Ho*Wo); layout chosen so reshapes stay views."""
    n, c, hp, wp = padded.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    cols = np.empty((n, c, kh, kw, ho, wo))
    for u in range(kh):
        for v in range(kw):
            cols[:, :, u, v] = padded[:, :, u:u + ho, v:v + wo]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _conv_forward(x: np.ndarray, w: np.ndarray, padding: int):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    if padding:
        xp = np.zeros((n, cin, h + 2 * padding, wd + 2 * padding))
        xp[:, :, padding:padding + h, padding:padding + wd] = x
    else:
        xp = x
    cols = _im2col(xp, kh, kw)
    ho, wo = h + 2 * padding - kh + 1, wd + 2 * padding - kw + 1
    out = np.matmul(w.reshape(1, cout, -1), cols)
    return out.reshape(n, cout, ho, wo), cols


def conv2d(x: Tensor, w: Tensor, padding: int = 0) -> Tensor:
    """Stride-1 cross-correlation with symmetric zero padding.

    ``x``: (N, Cin, H, W), ``w``: (Cout, Cin, kh, kw).
    """
    if x.ndim != 4 or w.ndim != 4:
        raise TensorError(f"op 'conv2d': expects 4-D input/weight, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise TensorError(
            f"op 'conv2d': channel counts disagree: input {x.shape[1]} vs weight {w.shape[1]}")
    kh, kw = w.shape[2], w.shape[3]
    if kh != kw:
        raise TensorError(f"op 'conv2d': only square kernels supported, got {kh}x{kw}")
    if x.shape[2] + 2 * padding < kh or x.shape[3] + 2 * padding < kw:
        raise TensorError(f"op 'conv2d': kernel {kh}x{kw} larger than padded input {x.shape}")
    out, cols = _conv_forward(x.data, w.data, padding)
    n, cout = out.shape[0], out.shape[1]

    def backward(g):
        gmat = g.reshape(n, cout, -1)
        dw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        # dx: full correlation of g with the flipped, channel-swapped kernel
        w_flip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        dx, _ = _conv_forward(np.ascontiguousarray(g), np.ascontiguousarray(w_flip),
                              kh - 1 - padding)
        return dx, dw

    return _make(out, "conv2d", (x, w), backward)


def max_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k max pooling; ties route gradient to the first max."""
    if x.ndim != 4:
        raise TensorError(f"op 'max-pool': expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if h % k or w % k:
        raise TensorError(f"op 'max-pool': spatial dims {h}x{w} not divisible by {k}")
    ho, wo = h // k, w // k
    windows = x.data.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        flat = np.zeros((n, c, ho, wo, k * k))
        np.put_along_axis(flat, idx[..., None], g[..., None], axis=-1)
        return (flat.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return _make(out, "max-pool", (x,), backward)


# -- primitive registry ------------------------------------------------------

PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "conv2d": conv2d,
    "relu": relu,
    "sigmoid": sigmoid,
    "log": log,
    "exp": exp,
    "abs": absolute,
    "clamp": clamp,
    "sum": tensor_sum,
    "mean": tensor_mean,
    "concat-channels": concat,
    "slice": slice_,
    "reshape": reshape,
    "max-pool": max_pool2d,
}


def forward_primitive(kind: str, inputs, **attrs) -> Tensor:
    """Dispatch one primitive by name; see ``PRIMITIVES`` for the op table."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise TensorError(f"unknown primitive '{kind}'") from None
    if kind == "concat-channels":
        return fn(inputs, **attrs)
    return fn(*inputs, **attrs)
