"""Reverse-mode automatic differentiation over small dense numpy arrays.

Every differentiable quantity is a :class:`Tensor` wrapping an ndarray.
Operations record their parents and a backward closure; calling
``Tensor.backward()`` runs the closures in reverse topological order and
accumulates gradients into every reachable tensor with ``requires_grad``.

Arrays stay small (batches of ego networks, m <= 32), so everything is
dense and there is no graph reuse: one forward builds one tape.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "concat",
    "leaky_relu",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "square",
    "clip",
    "masked_softmax",
    "masked_max",
]


def _sum_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the shape of its source operand."""
    if grad.shape == shape:
        return grad
    # drop leading broadcast axes
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """A dense array plus the tape edge that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "_grad_owned")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward
        self._grad_owned = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def backward(self, seed=None):
        """Accumulate gradients of self w.r.t. every upstream tensor.

        ``seed`` defaults to ones; a non-scalar output requires an explicit
        seed of matching shape (there is no implicit reduction).
        """
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward on non-scalar output requires a seed gradient")
            seed = np.ones_like(self.data)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.asarray(seed, dtype=self.data.dtype)
        self._grad_owned = False
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, grad: np.ndarray):
        # first contribution is stored by reference (closures never mutate
        # their incoming buffer); a second one forces a private copy
        if self.grad is None:
            self.grad = grad
            self._grad_owned = False
        elif self._grad_owned:
            self.grad += grad
        else:
            self.grad = self.grad + grad
            self._grad_owned = True

    # -- arithmetic sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap plain data as a constant Tensor; pass Tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _binary(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    return a, b, (a.requires_grad or b.requires_grad)


def add(a, b) -> Tensor:
    a, b, req = _binary(a, b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_sum_to_shape(g, a.data.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_sum_to_shape(g, b.data.shape))

    return Tensor(out_data, req, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b, req = _binary(a, b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_sum_to_shape(g, a.data.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_sum_to_shape(-g, b.data.shape))

    return Tensor(out_data, req, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b, req = _binary(a, b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_sum_to_shape(g * b.data, a.data.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_sum_to_shape(g * a.data, b.data.shape))

    return Tensor(out_data, req, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading batch axes."""
    a, b, req = _binary(a, b)
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad or a._parents:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_sum_to_shape(ga, a.data.shape))
        if b.requires_grad or b._parents:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_sum_to_shape(gb, b.data.shape))

    return Tensor(out_data, req, (a, b), backward)


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, slice, type(Ellipsis), type(None))) for p in parts)


def getitem(a: Tensor, idx) -> Tensor:
    out_data = a.data[idx]
    basic = _is_basic_index(idx)  # no duplicate targets: plain += suffices

    def backward(g):
        buf = np.zeros_like(a.data)
        if basic:
            buf[idx] += g
        else:
            np.add.at(buf, idx, g)
        a._accumulate(buf)

    return Tensor(out_data, a.requires_grad, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return Tensor(out_data, a.requires_grad, (a,), backward)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out_data = np.swapaxes(a.data, ax1, ax2)

    def backward(g):
        a._accumulate(np.swapaxes(g, ax1, ax2))

    return Tensor(out_data, a.requires_grad, (a,), backward)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    req = any(t.requires_grad for t in tensors)
    return Tensor(out_data, req, tuple(tensors), backward)


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return Tensor(out_data, a.requires_grad, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return Tensor(out_data, a.requires_grad, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return Tensor(out_data, a.requires_grad, (a,), backward)


def square(a) -> Tensor:
    a = as_tensor(a)
    out_data = a.data * a.data

    def backward(g):
        a._accumulate(2.0 * g * a.data)

    return Tensor(out_data, a.requires_grad, (a,), backward)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where no clamping occurred."""
    out_data = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def backward(g):
        a._accumulate(g * inside)

    return Tensor(out_data, a.requires_grad, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        a._accumulate(g * (a.data > 0))

    return Tensor(out_data, a.requires_grad, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    out_data = np.where(a.data >= 0, a.data, slope * a.data)

    def backward(g):
        a._accumulate(g * np.where(a.data >= 0, 1.0, slope))

    return Tensor(out_data, a.requires_grad, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), overflow-safe."""
    x = a.data
    out_data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = 1.0 / (1.0 + np.exp(-np.clip(x, -700, 700)))

    def backward(g):
        a._accumulate(g * sig)

    return Tensor(out_data, a.requires_grad, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    # split positive/negative branches for overflow safety
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return Tensor(out_data, a.requires_grad, (a,), backward)


def masked_softmax(logits: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over the entries where ``mask`` is true.

    Masked positions get weight exactly 0; rows with no valid entry come out
    all-zero instead of NaN (padded ego-network slots rely on this).
    """
    mask = np.asarray(mask, dtype=bool)
    mask = np.broadcast_to(mask, logits.data.shape)
    neg = np.where(mask, logits.data, -np.inf)
    mx = np.max(neg, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)  # all-masked rows
    e = np.where(mask, np.exp(neg - mx), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    safe = np.where(denom > 0, denom, 1.0)
    out_data = e / safe

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        logits._accumulate(out_data * (g - inner))

    return Tensor(out_data, logits.requires_grad, (logits,), backward)


def masked_max(a: Tensor, mask: np.ndarray, axis: int) -> Tensor:
    """Max over ``axis`` restricted to rows where ``mask`` is true.

    ``mask`` broadcasts against ``a``; every reduced slice must contain at
    least one valid entry. Gradient flows to the first argmax (subgradient).
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.data.shape)
    if not mask.any(axis=axis).all():
        raise ValueError("masked_max: some slice has no valid entry")
    neg = np.where(mask, a.data, -np.inf)
    out_data = neg.max(axis=axis)
    arg = neg.argmax(axis=axis)

    def backward(g):
        buf = np.zeros_like(a.data)
        idx = list(np.indices(out_data.shape))
        idx.insert(axis if axis >= 0 else a.data.ndim + axis, arg)
        np.add.at(buf, tuple(idx), g)
        a._accumulate(buf)

    return Tensor(out_data, a.requires_grad, (a,), backward)
