"""Dense tensors with eager reverse-mode autodiff on top of numpy.

Every operation records its parents and a backward closure at call time.
``backward`` walks the recorded graph once in reverse topological order.

Operations act on the trailing axes and broadcast over any leading axes, so a
``[T, d]`` sequence and a ``[B, T, d]`` batch go through the same code. The
finite-difference checker relies on this: it can stack many perturbed copies
of one parameter along a new leading axis and evaluate them in one pass.
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, LengthError

_FLOATS = (np.float32, np.float64)
_grad_enabled = contextvars.ContextVar("hfq_grad_enabled", default=True)


@contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def grad_enabled() -> bool:
    return _grad_enabled.get()


class Tensor:
    """An n-d float array, optionally tracked for gradients.

    Data stays float32 unless a float64 array is passed in; float64 flows
    through every op (numpy promotion), which is how the gradient checker
    runs a float32 model in double precision.
    """

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.type not in _FLOATS:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.op: str | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a constant")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def backward(self, params: Iterable["Tensor"] | None = None):
        backward(self, params)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: Sequence[Tensor], op: str, back: Callable) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = back
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _result(out, (a, b), "add", back)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), "neg", lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = b
        return _result(a.data * c, (a,), "scale", lambda g: (g * c,))
    out = a.data * b.data

    def back(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _result(out, (a, b), "mul", back)


def power(a: Tensor, exponent: float) -> Tensor:
    if exponent == 2:
        return mul(a, a)
    out = a.data ** exponent

    def back(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _result(out, (a,), "pow", back)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation GELU."""
    v = x.data
    v2 = v * v
    t = np.tanh(_GELU_C * v * (1.0 + 0.044715 * v2))
    out = 0.5 * v * (1.0 + t)

    def back(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner),)

    return _result(out, (x,), "gelu", back)


# -- shape ops ---------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _result(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _result(np.swapaxes(a.data, i, j), (a,), "swapaxes", lambda g: (np.swapaxes(g, i, j),))


def getitem(a: Tensor, index) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(a.data[index], (a,), "getitem", back)


def concat(tensors: Sequence[Tensor], axis: int = -2) -> Tensor:
    """Concatenate along a trailing ``axis`` (negative), broadcasting the leading axes."""
    if axis >= 0:
        raise ValueError("concat axis must be negative (counted from the end)")
    tensors = [as_tensor(t) for t in tensors]
    rank = max(t.ndim for t in tensors)
    padded = [(1,) * (rank - t.ndim) + t.shape for t in tensors]
    ax = rank + axis
    target = list(np.broadcast_shapes(*[p[:ax] + (1,) + p[ax + 1:] for p in padded]))
    parts, sizes = [], []
    for t, p in zip(tensors, padded):
        shape = tuple(target[:ax]) + (p[ax],) + tuple(target[ax + 1:])
        parts.append(np.broadcast_to(t.data.reshape(p), shape))
        sizes.append(p[ax])
    out = np.concatenate(parts, axis=ax)
    bounds = np.cumsum([0] + sizes)

    def back(g):
        grads = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            piece = np.take(g, np.arange(lo, hi), axis=ax)
            grads.append(unbroadcast(piece, (1,) * (rank - t.ndim) + t.shape).reshape(t.shape))
        return tuple(grads)

    return _result(out, tensors, "concat", back)


# -- reductions --------------------------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), "sum", back)


def reduce_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size / max(out.size, 1) if axis is not None else a.size

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _result(out, (a,), "mean", back)


# -- linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, numpy-broadcast over the rest."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # shared weight: fold the leading axes into one GEMM instead of a batched loop
        k = a.shape[-1]
        out = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))

        def back(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape[:-1] + (k,))
            gb = a.data.reshape(-1, k).T @ g2
            return unbroadcast(ga, a.shape), gb

        return _result(out, (a, b), "matmul", back)

    out = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _result(out, (a, b), "matmul", back)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), "softmax", back)


def standardize(x: Tensor, eps: float = 1e-5) -> Tensor:
    """(x - mean) / sqrt(var + eps) along the last axis (biased variance)."""
    v = x.data
    mu = v.mean(axis=-1, keepdims=True)
    centered = v - mu
    # second pass removes the float32 rounding residue of the first mean
    centered = centered - centered.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv

    def back(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _result(xhat, (x,), "standardize", back)


def im2col(x: Tensor, kernel: int, stride: int, pad: int) -> Tensor:
    """[..., T, C] -> [..., T_out, kernel * C] windows with zero padding on the time axis."""
    length, channels = x.shape[-2], x.shape[-1]
    if length + 2 * pad < kernel:
        raise LengthError(
            f"sequence of length {length} with padding {pad} is shorter than kernel {kernel}"
        )
    t_out = (length + 2 * pad - kernel) // stride + 1
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, widths)
    span = stride * (t_out - 1) + 1
    taps = [xp[..., k:k + span:stride, :] for k in range(kernel)]
    cols = np.stack(taps, axis=-2).reshape(x.shape[:-2] + (t_out, kernel * channels))

    def back(g):
        g = g.reshape(g.shape[:-1] + (kernel, channels))
        gp = np.zeros(g.shape[:-3] + xp.shape[-2:], dtype=g.dtype)
        for k in range(kernel):
            gp[..., k:k + span:stride, :] += g[..., k, :]
        return (gp[..., pad:pad + length, :],)

    return _result(cols, (x,), "im2col", back)


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None, stride: int = 1, pad: int = 0) -> Tensor:
    """1-d convolution over time for [..., T, C_in] inputs with weight [K, C_in, C_out].

    Output length is floor((T + 2*pad - K) / stride) + 1.
    """
    kernel, c_in, c_out = w.shape[-3:]
    if kernel % 2 == 0:
        raise DimensionError(f"conv1d kernel size must be odd, got {kernel}")
    if stride < 1 or pad < 0:
        raise DimensionError(f"conv1d needs stride >= 1 and pad >= 0, got {stride}, {pad}")
    if x.shape[-1] != c_in:
        raise DimensionError(f"conv1d input channels {x.shape} do not match weight {w.shape}")
    cols = im2col(x, kernel, stride, pad)
    out = cols @ reshape(w, w.shape[:-3] + (kernel * c_in, c_out))
    return out + bias if bias is not None else out


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Per-row softmax cross-entropy; ``labels`` broadcasts against logits.shape[:-1]."""
    v = logits.data
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), v.shape[:-1])
    shifted = v - v.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    picked = np.take_along_axis(shifted, labels[..., None], axis=-1)[..., 0]
    out = lse - picked

    def back(g):
        p = np.exp(shifted - lse[..., None])
        np.put_along_axis(p, labels[..., None], np.take_along_axis(p, labels[..., None], -1) - 1.0, -1)
        return (p * g[..., None],)

    return _result(out, (logits,), "cross_entropy", back)


# -- graph traversal ---------------------------------------------------------


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``; every input precedes its consumers."""
    order, seen = [], set()
    stack = [(root, False)]
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


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaves in ``params`` that the loss does not depend on get a zero gradient.
    """
    if loss.size != 1 or loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


# -- finite-difference oracle ------------------------------------------------


def _batched_shape(shape: tuple[int, ...], batch: int) -> tuple[int, ...]:
    # rank-1 parameters broadcast against [..., n, C] activations, so they get
    # an extra singleton axis to keep the perturbation axis leading.
    return (batch,) + (1,) * max(0, 2 - len(shape)) + shape


# central-difference stencils: offsets (in steps) and weights, divided by step
_STENCILS = {
    2: ((1, -1), (0.5, -0.5)),
    4: ((2, 1, -1, -2), (-1 / 12, 8 / 12, -8 / 12, 1 / 12)),
}


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-3,
    vectorized: bool = False,
    chunk: int = 256,
    order: int = 2,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` is a zero-argument closure over ``params`` returning a scalar loss.
    Both routes run in float64: parameters are promoted for the duration of
    the check and restored afterwards. The error per coordinate is
    ``|analytic - numeric| / (|numeric| + 1e-8)``. ``order`` picks the
    two-point (2) or four-point (4) central stencil.

    With ``vectorized=True``, each chunk of perturbed copies of one parameter
    is stacked on a leading axis and evaluated in one call of ``f``, which
    must then return one loss per copy. Every op here broadcasts over leading
    axes, so this is the same function evaluated many times at once.
    """
    if order not in _STENCILS:
        raise ValueError(f"stencil order must be one of {sorted(_STENCILS)}")
    stencil = _STENCILS[order]
    originals = [p.data for p in params]
    saved_grads = [p.grad for p in params]
    try:
        for p in params:
            p.data = p.data.astype(np.float64)
            p.grad = None
        loss = f()
        backward(loss, params)
        analytic = [p.grad.astype(np.float64) for p in params]
        worst = 0.0
        with no_grad():
            for p, ga in zip(params, analytic):
                base = p.data
                if vectorized:
                    numeric = _numeric_vectorized(f, p, base, step, chunk, stencil)
                else:
                    numeric = _numeric_loop(f, p, base, step, stencil)
                p.data = base
                err = np.abs(ga.ravel() - numeric) / (np.abs(numeric) + 1e-8)
                worst = max(worst, float(err.max(initial=0.0)))
        return worst
    finally:
        for p, data, g in zip(params, originals, saved_grads):
            p.data = data
            p.grad = g


def _numeric_loop(f, p, base, step, stencil):
    offsets, weights = stencil
    flat = base.ravel()
    numeric = np.zeros(flat.size)
    for i in range(flat.size):
        for k, w in zip(offsets, weights):
            bumped = flat.copy()
            bumped[i] += k * step
            p.data = bumped.reshape(base.shape)
            numeric[i] += w * float(f().data)
    return numeric / step


def _numeric_vectorized(f, p, base, step, chunk, stencil):
    offsets, weights = stencil
    n = base.size
    numeric = np.zeros(n)
    p.data = np.broadcast_to(base, _batched_shape(base.shape, 2)).copy()
    probe = f().data.ravel()
    p.data = base
    reference = float(f().data)
    if probe.size != 2 or not np.allclose(probe, reference, rtol=1e-12, atol=1e-12):
        raise ContractError("vectorized grad_check needs f to broadcast over a leading parameter axis")
    taps = len(offsets)
    for lo in range(0, n, chunk):
        idx = np.arange(lo, min(lo + chunk, n))
        m = idx.size
        stacked = np.broadcast_to(base.ravel(), (taps * m, n)).copy()
        rows = np.arange(m)
        for j, k in enumerate(offsets):
            stacked[rows + j * m, idx] += k * step
        p.data = stacked.reshape(_batched_shape(base.shape, taps * m))
        values = f().data.ravel().reshape(taps, m)
        numeric[idx] = np.tensordot(weights, values, axes=1)
    return numeric / step
