"""Dense float tensors with reverse-mode automatic differentiation.

Arrays are numpy float64 by default (float32 can be selected with
``set_default_dtype`` for speed; verification should stay in float64).
Every differentiable op builds a backward closure on the fly; calling
``backward`` on a scalar loss walks the tape in reverse topological order
and accumulates gradients into the ``grad`` field of every tensor that
has ``requires_grad`` set.

Gradients accumulate additively across backward calls until reset with
``zero_grad``. Gradient arrays are never mutated in place, only rebound,
so aliasing a gradient buffer between tensors is safe.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "is_grad_enabled",
    "set_default_dtype",
    "get_default_dtype",
    "add",
    "mul",
    "matmul",
    "relu",
    "reshape",
    "transpose",
    "tsum",
    "tmean",
    "softmax",
    "layer_norm",
    "dropout_apply",
    "cross_entropy_label_smoothed",
    "embedding",
    "backward",
]

_DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def set_default_dtype(dtype) -> None:
    """Select the dtype new tensors are created with (float32 or float64)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dt.type


def get_default_dtype():
    return _DEFAULT_DTYPE


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (evaluation/decoding)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense n-dimensional float array, optionally carrying a gradient.

    ``data`` is a row-major numpy array. ``grad`` is either None or an
    array of identical shape. Tensors are treated as immutable once
    created; the only sanctioned mutations are gradient accumulation and
    the in-place parameter update inside the optimizer.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_pass_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype != _DEFAULT_DTYPE:
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()
        self._pass_grad = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # internal: accumulate a contribution into the per-pass buffer
    def _acc(self, g: np.ndarray) -> None:
        self._pass_grad = g if self._pass_grad is None else self._pass_grad + g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], bw) -> Tensor:
    """Wrap an op result, attaching the tape node when gradients are on."""
    grad_parents = tuple(p for p in parents if p.requires_grad)
    if _grad_enabled and grad_parents:
        out = Tensor(data, requires_grad=True)
        out._parents = grad_parents
        out._backward = bw()
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bw():
        def fn(g):
            if a.requires_grad:
                a._acc(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._acc(_unbroadcast(g, b.data.shape))
        return fn

    return _make(out, (a, b), bw)


def mul(a, b) -> Tensor:
    """Elementwise product; ``b`` may be a python scalar."""
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        s = float(b)

        def bw_scalar():
            def fn(g):
                a._acc(g * s)
            return fn

        return _make(a.data * s, (a,), bw_scalar)

    b = _as_tensor(b)
    out = a.data * b.data

    def bw():
        def fn(g):
            if a.requires_grad:
                a._acc(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._acc(_unbroadcast(g * a.data, b.data.shape))
        return fn

    return _make(out, (a, b), bw)


def matmul(a, b) -> Tensor:
    """Matrix product of stacked matrices; leading dims broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: batch dimensions do not broadcast: {a.shape} @ {b.shape}") from exc

    def bw():
        def fn(g):
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                a._acc(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b._acc(_unbroadcast(gb, b.data.shape))
        return fn

    return _make(out, (a, b), bw)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def bw():
        mask = x.data > 0.0

        def fn(g):
            x._acc(g * mask)
        return fn

    return _make(out, (x,), bw)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def bw():
        orig = x.data.shape

        def fn(g):
            x._acc(g.reshape(orig))
        return fn

    return _make(out, (x,), bw)


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    out = x.data.transpose(axes)

    def bw():
        inv = tuple(np.argsort(axes))

        def fn(g):
            x._acc(g.transpose(inv))
        return fn

    return _make(out, (x,), bw)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw():
        shape = x.data.shape

        def fn(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x._acc(np.broadcast_to(g, shape).copy())
        return fn

    return _make(out, (x,), bw)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    if axis is None:
        n = x.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([x.data.shape[a] for a in axis]))
    else:
        n = x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(x, axis: int = -1) -> Tensor:
    """Normalized exponentials along ``axis``, max-subtracted for stability."""
    x = _as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw():
        y = out

        def fn(g):
            x._acc(y * (g - (g * y).sum(axis=axis, keepdims=True)))
        return fn

    return _make(out, (x,), bw)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize each trailing vector to zero mean and unit variance, then
    apply the elementwise affine transform ``gain * xhat + bias``.

    Uses the population variance (divide by the vector length).
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias shapes {gain.shape}/{bias.shape} do not match last dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw():
        def fn(g):
            if x.requires_grad:
                gh = g * gain.data
                # d/dx of (x - mu(x)) * inv(x): project out the mean and the
                # component along xhat contributed by the variance term
                gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                            - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
                x._acc(gx)
            lead = tuple(range(x.data.ndim - 1))
            if gain.requires_grad:
                gain._acc((g * xhat).sum(axis=lead))
            if bias.requires_grad:
                bias._acc(g.sum(axis=lead))
        return fn

    return _make(out, (x, gain, bias), bw)


def dropout_apply(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero each element with probability ``rate`` and
    scale survivors by 1/(1-rate). Identity when not training or rate is 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = _as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode requires an rng")
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    scaled = keep / (1.0 - rate)
    out = x.data * scaled

    def bw():
        def fn(g):
            x._acc(g * scaled)
        return fn

    return _make(out, (x,), bw)


def cross_entropy_label_smoothed(logits, targets, epsilon: float = 0.0,
                                 ignore_index: int | None = None) -> Tensor:
    """Mean cross-entropy of ``logits`` [positions, vocab] against targets
    smoothed as q(k) = (1-eps) * 1[k == gold] + eps / vocab.

    Positions whose target equals ``ignore_index`` are excluded from the
    mean. The smoothing mass is spread over the full vocabulary, gold
    index included.
    """
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross entropy expects [positions, vocab] logits, got {logits.shape}")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"label smoothing must be in [0, 1), got {epsilon}")
    t = np.asarray(targets, dtype=np.int64)
    if t.ndim != 1 or t.shape[0] != logits.data.shape[0]:
        raise ShapeError(f"targets shape {t.shape} does not match logits rows {logits.data.shape[0]}")
    n, v = logits.data.shape
    valid = np.ones(n, dtype=bool) if ignore_index is None else (t != ignore_index)
    if not valid.any():
        raise ValueError("cross entropy: every position is ignored")
    tv = t[valid]
    if tv.min() < 0 or tv.max() >= v:
        raise ValueError(f"target index out of vocabulary range [0, {v})")

    m = logits.data.max(axis=1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - lse
    rows = np.nonzero(valid)[0]
    gold_lp = log_probs[rows, tv]
    mean_lp = log_probs[rows].mean(axis=1)
    loss = -((1.0 - epsilon) * gold_lp + epsilon * mean_lp).mean()

    def bw():
        def fn(g):
            p = np.exp(log_probs[rows])
            q = np.full((rows.size, v), epsilon / v, dtype=p.dtype)
            q[np.arange(rows.size), tv] += 1.0 - epsilon
            gl = np.zeros_like(logits.data)
            gl[rows] = (p - q) * (float(g) / rows.size)
            logits._acc(gl)
        return fn

    return _make(np.asarray(loss), (logits,), bw)


def embedding(table, ids) -> Tensor:
    """Row gather: out[..., :] = table[ids[...], :]; gradient scatter-adds."""
    table = _as_tensor(table)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be rank 2, got {table.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ValueError(f"embedding index out of range [0, {table.data.shape[0]})")
    out = table.data[idx]

    def bw():
        def fn(g):
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx.ravel(), g.reshape(-1, table.data.shape[1]))
            table._acc(gt)
        return fn

    return _make(out, (table,), bw)


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order over the tape (avoids recursion limits)."""
    order: list[Tensor] = []
    visited = {id(root)}
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, i = stack[-1]
        parents = node._parents
        if i < len(parents):
            stack[-1] = (node, i + 1)
            p = parents[i]
            if id(p) not in visited:
                visited.add(id(p))
                stack.append((p, 0))
        else:
            stack.pop()
            order.append(node)
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``grad`` for every tensor with
    ``requires_grad`` reachable from ``loss``. Repeated calls accumulate.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    order = _topo_order(loss)
    loss._pass_grad = np.ones_like(loss.data)
    for node in reversed(order):
        g = node._pass_grad
        node._pass_grad = None
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is not None:
            node._backward(g)
