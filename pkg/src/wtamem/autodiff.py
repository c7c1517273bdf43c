"""Minimal dense tensor engine with reverse-mode automatic differentiation.

Tensors wrap a numpy array.  Every differentiable operation records a
:class:`TapeNode` on its output holding the parents and a backward closure;
:func:`backward` walks that tape in reverse topological order.

Only the operations needed by the convolutional architectures in
:mod:`wtamem.model` are provided.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype used for new float tensors."""
    global _DEFAULT_DTYPE
    old, _DEFAULT_DTYPE = _DEFAULT_DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference)."""
    global _GRAD_ENABLED
    old, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@dataclass(eq=False)
class TapeNode:
    """One recorded operation.

    ``backward`` maps the upstream gradient to one gradient per parent (or
    ``None`` for parents that need none).  ``gate_constant`` marks nodes whose
    saved multiplicative factor is deliberately excluded from differentiation.
    """

    op: str
    parents: tuple
    backward: Callable
    saved: dict = field(default_factory=dict)
    gate_constant: bool = False
    consumed: bool = False


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _node: TapeNode | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node = _node

    # -- array-like surface -------------------------------------------------
    @property
    def shape(self) -> tuple:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def check_finite(self, name: str = "tensor"):
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in {name}")
        return self

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
    return Tensor(arr)


def _make(data, parents: Sequence[Tensor], op: str, grad_fn: Callable, *, gate_constant=False, **saved):
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    node = TapeNode(op, tuple(parents), grad_fn, saved, gate_constant)
    return Tensor(data, requires_grad=True, _node=node)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and reductions
# ---------------------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data
    return _make(out, (a, b), "add",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), "neg", lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), "mul",
                 lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return _make(ad ** p, (a,), "pow", lambda g: (g * p * ad ** (p - 1),))


def tensor_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.asarray(a.data.sum()), (a,), "sum",
                 lambda g: (np.broadcast_to(g, shape).astype(a.dtype),))


def tensor_mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _make(np.asarray(a.data.mean()), (a,), "mean",
                 lambda g: (np.broadcast_to(g / n, shape).astype(a.dtype),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(old),))


def relu(a: Tensor) -> Tensor:
    # derivative at exactly 0 is 0
    mask = a.data > 0
    return _make(a.data * mask, (a,), "relu", lambda g: (g * mask,))


def gate(a: Tensor, factor: np.ndarray) -> Tensor:
    """Multiply ``a`` by ``factor`` treating ``factor`` as a constant.

    This is the straight-through gating node: the backward pass only scales
    the upstream gradient by the saved factor.
    """
    factor = np.asarray(factor, dtype=a.dtype)
    return _make(a.data * factor, (a,), "gate", lambda g: (g * factor,),
                 gate_constant=True, factor=factor)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), "matmul", lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` of shape (in, out)."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def conv_output_size(size: int, kernel: int, stride: int, padding: int, strict: bool = True) -> int:
    """Output length of a strided window.  ``strict`` rejects a trailing partial
    window; otherwise it is dropped (floor semantics)."""
    span = size + 2 * padding - kernel
    if span < 0 or (strict and span % stride):
        raise ValueError(
            f"non-integral conv output: size={size}, kernel={kernel}, stride={stride}, padding={padding}")
    return span // stride + 1


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0, strict: bool = True) -> Tensor:
    """2-D cross-correlation, NCHW input and (F, C, kh, kw) weights.

    Implemented by patch-matrix expansion in channels-last layout.  With
    ``strict=False`` a trailing partial window is dropped, as in the usual
    stride-2 downsampling of even-sized maps.
    """
    N, C, H, W = x.shape
    F, Cw, kh, kw = w.shape
    if C != Cw:
        raise ValueError(f"conv2d channel mismatch: input {C}, weight {Cw}")
    Ho = conv_output_size(H, kh, stride, padding, strict)
    Wo = conv_output_size(W, kw, stride, padding, strict)
    s, p = stride, padding

    xh = x.data.transpose(0, 2, 3, 1)
    if p:
        xh = np.pad(xh, ((0, 0), (p, p), (p, p), (0, 0)))
    cols = np.empty((N, Ho, Wo, kh, kw, C), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xh[:, i:i + s * Ho:s, j:j + s * Wo:s, :]
    cols = cols.reshape(N * Ho * Wo, kh * kw * C)
    wmat = w.data.transpose(2, 3, 1, 0).reshape(kh * kw * C, F)
    out = (cols @ wmat).reshape(N, Ho, Wo, F).transpose(0, 3, 1, 2)

    def grad_fn(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, F)
        gx = gw = None
        if w.requires_grad:
            gw = (cols.T @ g2).reshape(kh, kw, C, F).transpose(3, 2, 0, 1)
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(N, Ho, Wo, kh, kw, C)
            dxp = np.zeros((N, H + 2 * p, W + 2 * p, C), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + s * Ho:s, j:j + s * Wo:s, :] += dcols[:, :, :, i, j, :]
            gx = dxp[:, p:p + H, p:p + W, :].transpose(0, 3, 1, 2)
        return gx, gw

    return _make(np.ascontiguousarray(out), (x, w), "conv2d", grad_fn, stride=s, padding=p)


def avgpool_global(x: Tensor) -> Tensor:
    """Mean over spatial axes: (N, C, H, W) -> (N, C)."""
    N, C, H, W = x.shape
    hw = H * W
    return _make(x.data.mean(axis=(2, 3)), (x,), "avgpool",
                 lambda g: (np.broadcast_to((g / hw)[:, :, None, None], x.shape).astype(x.dtype),))


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum: float = 0.9,
                eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    In training mode the running buffers are updated in place:
    ``running = momentum * running + (1 - momentum) * batch_stat``.
    """
    xd = x.data
    if training:
        n = xd.size // xd.shape[1]
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var * (n / max(n - 1, 1))
    else:
        mean, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean[None, :, None, None]) * inv[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def grad_fn(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None, None]
            if training:
                m = xd.size // xd.shape[1]
                gx = (inv[None, :, None, None] / m) * (
                    m * gxhat
                    - gxhat.sum(axis=(0, 2, 3))[None, :, None, None]
                    - xhat * (gxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None])
            else:
                gx = gxhat * inv[None, :, None, None]
        return gx, gg, gb

    return _make(out.astype(xd.dtype), (x, gamma, beta), "batchnorm2d", grad_fn)


def softmax_over_segment(x: Tensor, segment: int, axis: int = 1) -> Tensor:
    """Softmax over consecutive segments of length ``segment`` along ``axis``."""
    n = x.shape[axis]
    if segment < 1 or n % segment:
        raise ValueError(f"segment length {segment} does not divide axis length {n}")
    shape = x.shape
    grouped = shape[:axis] + (n // segment, segment) + shape[axis + 1:]
    z = x.data.reshape(grouped)
    ax = axis + 1
    e = np.exp(z - z.max(axis=ax, keepdims=True))
    sm = e / e.sum(axis=ax, keepdims=True)

    def grad_fn(g):
        gz = g.reshape(grouped)
        return ((gz - (gz * sm).sum(axis=ax, keepdims=True)) * sm).reshape(shape),

    return _make(sm.reshape(shape), (x,), "softmax", grad_fn)


def cross_entropy_from_logits(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of (N, K) logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data
    N = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    loss = (logsum - shifted[np.arange(N), labels]).mean()

    def grad_fn(g):
        p = np.exp(shifted - logsum[:, None])
        p[np.arange(N), labels] -= 1.0
        return (p * (g / N)).astype(z.dtype),

    return _make(np.asarray(loss, dtype=z.dtype), (logits,), "cross_entropy", grad_fn)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------
def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for p in t._node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf that requires it.

    The tape is released afterwards; a second call on the same loss raises.
    """
    if loss.size != 1:
        raise ValueError("backward() needs a scalar loss")
    if loss._node is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
            return
        raise RuntimeError("loss does not depend on any tensor requiring grad")
    if loss._node.consumed:
        raise RuntimeError("backward() called twice on the same graph; re-run forward first")

    order = _topological(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t._node
        if node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        parent_grads = node.backward(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = grads[key] + pg if key in grads else pg
        node.consumed = True
        node.saved.clear()
