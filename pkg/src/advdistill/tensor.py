"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a dense float array (float32 by default, float64 for
gradient checking) and records the operation that produced it. Calling
``backward()`` on a scalar walks the recorded graph in reverse topological
order and accumulates gradients into every node with ``requires_grad``.

The op set is intentionally small: exactly what the convolutional
classifiers, the conditional generator, the losses, and the attacks need.
Gradients only flow into parents that require them, so crafting adversarial
examples against a frozen model never pays for parameter gradients.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class NumericalError(RuntimeError):
    """A forward or backward value became non-finite."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording; forwards inside run as plain numpy."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "label", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: Sequence["Tensor"] = (), backward: Callable[[], None] | None = None,
                 label: str = ""):
        if not isinstance(data, np.ndarray):
            if isinstance(data, np.generic):  # numpy scalar: keep its dtype
                data = np.asarray(data)
            else:
                data = np.asarray(data, dtype=np.float32)
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self.label = label
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        tag = self.label or self.op
        return f"Tensor({tag}, shape={self.data.shape}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            if g.dtype != self.data.dtype or g.base is not None or not g.flags.writeable:
                g = np.array(g, dtype=self.data.dtype)
            self.grad = g
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.data.shape}")
        if not np.isfinite(self.data):
            raise NumericalError(self._nonfinite_diagnostic())
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    def _nonfinite_diagnostic(self) -> str:
        # breadth-first search for the deepest non-finite ancestor
        frontier = [self]
        culprit = self
        seen = {id(self)}
        while frontier:
            nxt = []
            for node in frontier:
                for p in node._parents:
                    if id(p) in seen:
                        continue
                    seen.add(id(p))
                    if not np.isfinite(p.data).all():
                        culprit = p
                        nxt.append(p)
            frontier = nxt
        tag = culprit.label or culprit.op
        bad = culprit.data[~np.isfinite(culprit.data)]
        return (f"non-finite value in '{tag}' (op={culprit.op}): "
                f"{bad.ravel()[0]!r} among {bad.size} bad entries")

    # operator sugar for the few places expressions read better
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: Sequence[Tensor], op: str,
          backward_builder: Callable[[Tensor], Callable[[], None]] | None) -> Tensor:
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, op=op, parents=parents if req else ())
    if req and backward_builder is not None:
        out._backward = backward_builder(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    data = a.data + b.data

    def make(out: Tensor):
        def bw():
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(out.grad, b.data.shape))
        return bw

    return _node(data, (a, b), "add", make)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    data = a.data * b.data

    def make(out: Tensor):
        def bw():
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(out.grad * b.data, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(out.grad * a.data, b.data.shape))
        return bw

    return _node(data, (a, b), "mul", make)


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)
    data = a.data * s

    def make(out: Tensor):
        def bw():
            a.accumulate_grad(out.grad * s)
        return bw

    return _node(data, (a,), "scale", make)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data @ b.data

    def make(out: Tensor):
        def bw():
            if a.requires_grad:
                a.accumulate_grad(out.grad @ b.data.T)
            if b.requires_grad:
                b.accumulate_grad(a.data.T @ out.grad)
        return bw

    return _node(data, (a, b), "matmul", make)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def make(out: Tensor):
        def bw():
            a.accumulate_grad(out.grad.reshape(a.data.shape))
        return bw

    return _node(data, (a,), "reshape", make)


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def make(out: Tensor):
        def bw():
            offset = 0
            for p, n in zip(parts, sizes):
                if p.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(offset, offset + n)
                    p.accumulate_grad(out.grad[tuple(sl)])
                offset += n
        return bw

    return _node(data, tuple(parts), "concat", make)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def make(out: Tensor):
        def bw():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate_grad(np.broadcast_to(g, a.data.shape))
        return bw

    return _node(data, (a,), "sum", make)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def make(out: Tensor):
        mask = a.data > 0
        def bw():
            a.accumulate_grad(out.grad * mask)
        return bw

    return _node(data, (a,), "relu", make)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    data = np.where(a.data > 0, a.data, a.data * a.data.dtype.type(slope))

    def make(out: Tensor):
        factor = np.where(a.data > 0, a.data.dtype.type(1), a.data.dtype.type(slope))
        def bw():
            a.accumulate_grad(out.grad * factor)
        return bw

    return _node(data, (a,), "leaky_relu", make)


def sigmoid(a: Tensor) -> Tensor:
    # stable piecewise form, no overflow in exp
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def make(out: Tensor):
        def bw():
            a.accumulate_grad(out.grad * out.data * (1.0 - out.data))
        return bw

    return _node(data, (a,), "sigmoid", make)


def texp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def make(out: Tensor):
        def bw():
            a.accumulate_grad(out.grad * out.data)
        return bw

    return _node(data, (a,), "exp", make)


def log_softmax(a: Tensor, axis: int = 1) -> Tensor:
    """Numerically stable log-softmax (max subtraction)."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def make(out: Tensor):
        softmax = np.exp(out.data)
        def bw():
            g = out.grad
            a.accumulate_grad(g - softmax * g.sum(axis=axis, keepdims=True))
        return bw

    return _node(data, (a,), "log_softmax", make)


def take_per_row(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select ``a[i, idx[i]]`` for every row i of a 2-d tensor."""
    rows = np.arange(a.data.shape[0])
    data = a.data[rows, idx]

    def make(out: Tensor):
        def bw():
            g = np.zeros_like(a.data)
            np.add.at(g, (rows, idx), out.grad)
            a.accumulate_grad(g)
        return bw

    return _node(data, (a,), "take_per_row", make)


def upsample2x(a: Tensor) -> Tensor:
    """Nearest-neighbour x2 upsampling on (N, C, H, W)."""
    data = a.data.repeat(2, axis=2).repeat(2, axis=3)

    def make(out: Tensor):
        def bw():
            n, c, h2, w2 = out.grad.shape
            g = out.grad.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))
            a.accumulate_grad(g)
        return bw

    return _node(data, (a,), "upsample2x", make)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (n, c, kh, kw, ho, wo), (s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False)
    # (C*kh*kw, N*Ho*Wo) so the whole batch is one GEMM
    cols = np.ascontiguousarray(view.transpose(1, 2, 3, 0, 4, 5)).reshape(c * kh * kw, n * ho * wo)
    return cols, ho, wo


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    blocks = cols.reshape(c, kh, kw, n, ho, wo)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                blocks[:, i, j].transpose(1, 0, 2, 3)
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 1) -> Tensor:
    """2-d convolution, weights (out, in, kh, kw), via im2col + GEMM."""
    n = x.data.shape[0]
    f, _, kh, kw = w.data.shape
    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    wrow = w.data.reshape(f, -1)
    out2 = wrow @ cols  # (F, N*Ho*Wo)
    data = out2.reshape(f, n, ho, wo).transpose(1, 0, 2, 3)
    if b is not None:
        data = data + b.data.reshape(1, f, 1, 1)
    else:
        data = np.ascontiguousarray(data)
    parents = (x, w) if b is None else (x, w, b)

    def make(out: Tensor):
        def bw():
            g = out.grad
            g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(f, -1)
            if b is not None and b.requires_grad:
                b.accumulate_grad(g2.sum(axis=1))
            if w.requires_grad:
                w.accumulate_grad((g2 @ cols.T).reshape(w.data.shape))
            if x.requires_grad:
                dcols = wrow.T @ g2
                x.accumulate_grad(_col2im(dcols, x.data.shape, kh, kw, stride, padding))
        return bw

    return _node(data, parents, "conv2d", make)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               mean: np.ndarray, var: np.ndarray, eps: float,
               through_stats: bool) -> Tensor:
    """Normalize (N, C, H, W) per channel with the given statistics.

    With ``through_stats`` the statistics are this batch's own and the full
    batch-norm backward (through mean and variance) is used; otherwise they
    are frozen running buffers and the backward is a plain per-channel affine.
    """
    istd = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = (x.data - mean.reshape(1, -1, 1, 1)) * istd.reshape(1, -1, 1, 1)
    data = gamma.data.reshape(1, -1, 1, 1) * xhat + beta.data.reshape(1, -1, 1, 1)

    def make(out: Tensor):
        def bw():
            g = out.grad
            if gamma.requires_grad:
                gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
            if beta.requires_grad:
                beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                gx = g * gamma.data.reshape(1, -1, 1, 1)
                if out.op == "batch_norm_train":
                    m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
                    sum_gx = gx.sum(axis=(0, 2, 3), keepdims=True)
                    sum_gx_xhat = (gx * xhat).sum(axis=(0, 2, 3), keepdims=True)
                    dx = (gx - sum_gx / m - xhat * sum_gx_xhat / m) * istd.reshape(1, -1, 1, 1)
                else:
                    dx = gx * istd.reshape(1, -1, 1, 1)
                x.accumulate_grad(dx)
        return bw

    op = "batch_norm_train" if through_stats else "batch_norm_eval"
    return _node(data, (x, gamma, beta), op, make)


def gradients(loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Backward from ``loss`` and return the gradient of every param."""
    loss.backward()
    out = []
    for p in params:
        if p.grad is None:
            out.append(np.zeros_like(p.data))
        else:
            out.append(p.grad)
    return out
