"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable primitive is a plain function that returns a new
:class:`Tensor` holding references to its inputs and a closure that maps the
output gradient to input gradients. :func:`backward` walks the resulting DAG
in reverse topological order.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """A node in the autodiff graph.

    Attributes:
        data: the value, a numpy array.
        grad: accumulated gradient (same shape as ``data``) or ``None``.
        requires_grad: whether gradients should flow into this node.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Callable | None = None, op: str = ""):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(dtype or DEFAULT_DTYPE)
    return Tensor(arr)


def _lift(a, b):
    """Wrap constants so they match the dtype of the tensor operand."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def _make(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------

def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that require grad, inputs before outputs."""
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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> list[np.ndarray] | None:
    """Populate ``.grad`` on every tensor that contributes to ``loss``.

    Gradients accumulate into existing ``.grad`` buffers, so callers reset them
    between steps (see :func:`zero_grad`). When ``params`` is given, their
    gradients are returned in order, with zeros for parameters that do not
    reach the loss.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    params = list(params) if params is not None else None
    if loss.requires_grad:
        order = topological_order(loss)
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    if params is None:
        return None
    out = []
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        out.append(p.grad)
    return out


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a, b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a, b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a, b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _lift(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "div")


def power(a: Tensor, exponent: float) -> Tensor:
    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _make(a.data ** exponent, (a,), bw, "pow")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def bw(g):
        return (g * 0.5 / out,)

    return _make(out, (a,), bw, "sqrt")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _make(x * cdf, (a,), bw, "gelu")


# ---------------------------------------------------------------------------
# shape manipulation and reductions
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(out, (a,), bw, "mean")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (the last axis by default)."""
    ref = next((t for t in tensors if isinstance(t, Tensor)), None)
    dtype = ref.dtype if ref is not None else DEFAULT_DTYPE
    ts = [t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=dtype)) for t in tensors]
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, bw, "concat")


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (a,), bw, "getitem")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _lift(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` shaped (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ---------------------------------------------------------------------------
# neural primitives
# ---------------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def layer_norm(x: Tensor, gamma: Tensor | None, beta: Tensor | None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply an optional affine map."""
    d = x.shape[-1]
    if gamma is not None and gamma.shape != (d,):
        raise ShapeError(f"layer_norm: gain shape {gamma.shape} does not match features {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data
    parents = [x] + [p for p in (gamma, beta) if p is not None]

    def bw(g):
        gx_hat = g * gamma.data if gamma is not None else g
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        red = tuple(range(g.ndim - 1))
        if gamma is not None:
            grads.append((g * xhat).sum(axis=red))
        if beta is not None:
            grads.append(g.sum(axis=red))
        return tuple(grads)

    return _make(out, parents, bw, "layer_norm")


def group_norm(x: Tensor, num_groups: int, gamma: Tensor | None, beta: Tensor | None,
               eps: float = 1e-5) -> Tensor:
    """GroupNorm on channels-first input (B, C, L)."""
    b, c, n = x.shape
    if c % num_groups:
        raise ShapeError(f"group_norm: {c} channels not divisible into {num_groups} groups")
    xg = x.data.reshape(b, num_groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(b, c, n)
    out = xhat
    if gamma is not None:
        out = out * gamma.data[None, :, None]
    if beta is not None:
        out = out + beta.data[None, :, None]
    parents = [x] + [p for p in (gamma, beta) if p is not None]

    def bw(g):
        gx_hat = g * gamma.data[None, :, None] if gamma is not None else g
        gh = gx_hat.reshape(b, num_groups, -1)
        xh = xhat.reshape(b, num_groups, -1)
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xh * (gh * xh).mean(axis=-1, keepdims=True))
        grads = [gx.reshape(b, c, n)]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=(0, 2)))
        if beta is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return _make(out, parents, bw, "group_norm")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """BatchNorm over the leading axis of a (B, F) input.

    In training mode the batch statistics are used and the running buffers are
    updated in place (unbiased variance, as in PyTorch). In eval mode the
    running buffers are used and the op is a fixed affine map.
    """
    if x.ndim != 2 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batch_norm: input {x.shape} does not match features {gamma.shape}")
    if not training:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean) * inv
        out = xhat * gamma.data + beta.data

        def bw_eval(g):
            return g * gamma.data * inv, (g * xhat).sum(axis=0), g.sum(axis=0)

        return _make(out.astype(x.dtype), (x, gamma, beta), bw_eval, "batch_norm")

    n = x.shape[0]
    if n < 2:
        raise ShapeError("batch_norm: training mode needs at least 2 samples")
    mu = x.data.mean(axis=0)
    xc = x.data - mu
    var = (xc * xc).mean(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    running_mean *= 1.0 - momentum
    running_mean += momentum * mu
    running_var *= 1.0 - momentum
    running_var += momentum * var * n / (n - 1)
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=0) - xhat * (gx_hat * xhat).mean(axis=0))
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make(out, (x, gamma, beta), bw, "batch_norm")


def zscore(x: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """(x - mean) / (std + eps) along ``axis`` with population std."""
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    std = np.sqrt((xc * xc).mean(axis=axis, keepdims=True))
    denom = std + eps
    out = xc / denom
    n = x.shape[axis]

    def bw(g):
        # d std / d x = xc / (n * std); guarded for std == 0
        safe = np.where(std > 0, std, 1.0)
        dstd = xc / (n * safe) * (std > 0)
        gc = g / denom
        g_std = -(g * xc).sum(axis=axis, keepdims=True) / denom ** 2
        gx = gc - gc.mean(axis=axis, keepdims=True) + g_std * dstd
        return (gx,)

    return _make(out, (x,), bw, "zscore")


def embedding(weight: Tensor, indices: np.ndarray) -> Tensor:
    indices = np.asarray(indices, dtype=np.int64)
    v = weight.shape[0]
    if indices.size and (indices.min() < 0 or indices.max() >= v):
        raise ShapeError(f"embedding: indices outside vocabulary of size {v}")
    out = weight.data[indices]

    def bw(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, indices.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return _make(out, (weight,), bw, "embedding")


def conv1d_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """Strided 1-D convolution on (B, C_in, L) with weight (C_out, C_in, K)."""
    b, cin, length = x.shape
    cout, wcin, k = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv1d: input {x.shape} does not match weight {weight.shape}")
    lout = conv1d_output_length(length, k, stride, padding)
    if lout < 1:
        raise ShapeError(f"conv1d: input length {length} too short for kernel {k}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :lout]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b * lout, cin * k)
    wmat = weight.data.reshape(cout, cin * k)
    out = (cols @ wmat.T).reshape(b, lout, cout).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]
    parents = [x, weight] + ([bias] if bias is not None else [])

    def bw(g):
        g2 = g.transpose(0, 2, 1).reshape(b * lout, cout)
        grads = []
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(b, lout, cin, k)
            dxp = np.zeros_like(xp)
            span = stride * (lout - 1) + 1
            for j in range(k):
                dxp[:, :, j:j + span:stride] += dcols[:, :, :, j].transpose(0, 2, 1)
            grads.append(dxp[:, :, padding:padding + length] if padding else dxp)
        else:
            grads.append(None)
        grads.append((g2.T @ cols).reshape(cout, cin, k))
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return _make(np.ascontiguousarray(out), parents, bw, "conv1d")


def masked_mean(x: Tensor, mask: np.ndarray, axis: int = 1) -> Tensor:
    """Mean of (B, T, D) over valid positions of a (B, T) mask."""
    m = np.asarray(mask, dtype=x.dtype)
    counts = m.sum(axis=axis, keepdims=True)
    if np.any(counts == 0):
        raise ShapeError("masked_mean: a row has no valid positions")
    w = (m / counts)[..., None]
    out = (x.data * w).sum(axis=axis)

    def bw(g):
        return (np.expand_dims(g, axis) * w,)

    return _make(out, (x,), bw, "masked_mean")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor,
                                 key_mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """softmax(q k^T / sqrt(d_k)) v over the last two axes.

    ``key_mask`` is broadcastable to the score shape (..., T_q, T_k); False
    entries are excluded. Returns the output and the attention weights.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: incompatible q {q.shape}, k {k.shape}, v {v.shape}")
    scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    if key_mask is not None:
        bias = np.where(np.asarray(key_mask, dtype=bool), 0.0, -1e9).astype(scores.dtype)
        scores = scores + Tensor(bias)
    weights = softmax(scores, axis=-1)
    return matmul(weights, v), weights


OP_CATALOG = {
    "matmul": matmul,
    "linear": linear,
    "conv1d": conv1d,
    "group_norm": group_norm,
    "layer_norm": layer_norm,
    "batch_norm": batch_norm,
    "gelu": gelu,
    "relu": relu,
    "tanh": tanh,
    "softmax": softmax,
    "attention": scaled_dot_product_attention,
    "mean_pool": mean,
    "masked_mean_pool": masked_mean,
    "embedding": embedding,
    "concat": concat,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "pow": power,
    "sqrt": sqrt,
    "exp": exp,
    "log": log,
    "sum": sum_,
    "reshape": reshape,
    "swapaxes": swapaxes,
    "transpose": transpose,
    "getitem": getitem,
    "zscore": zscore,
    "dropout": dropout,
}


def op_catalog() -> frozenset[str]:
    """Names of the differentiable primitives available to the encoders."""
    return frozenset(OP_CATALOG)
