"""
Reverse-mode automatic differentiation over numpy arrays.

Every operation records its parents and a backward closure on the output
Tensor; ``Tensor.backward`` walks the graph in reverse topological order and
frees it afterwards, so each training step builds a fresh graph.
"""

import contextlib
import logging
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from errors import DimensionError

logger = logging.getLogger(__name__)

_DTYPE = np.float32
_GRAD_ENABLED = True

LAYER_NORM_EPS = 1e-5
COSINE_EPS = 1e-8


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the storage dtype of newly created tensors."""
    global _DTYPE
    previous = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording (inference, generation)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Dense array with an accumulated gradient of the same shape."""

    def __init__(
        self,
        values,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _parents: Tuple["Tensor", ...] = (),
        _op: str = "",
    ):
        self.values: np.ndarray = np.asarray(values, dtype=_DTYPE)
        self.requires_grad = requires_grad
        self.name = name
        self._grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = _op

    # convenience

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, value: np.ndarray) -> None:
        self._grad = np.asarray(value, dtype=self.values.dtype).reshape(self.values.shape)

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.values.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def detach(self, requires_grad: bool = False) -> "Tensor":
        """Copy values into a new leaf, cut off from the current graph."""
        return Tensor(self.values.copy(), requires_grad=requires_grad, name=self.name)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{flag}{label})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.array(g, dtype=self.values.dtype).reshape(self.values.shape)
        else:
            self._grad += g

    # autograd core

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable tensor's grad."""
        if grad is None:
            if self.values.size != 1:
                raise DimensionError(f"backward() needs an explicit grad for shape {self.shape}")
            seed = np.ones_like(self.values)
        else:
            seed = np.asarray(grad, dtype=self.values.dtype).reshape(self.values.shape)
        self._accumulate(seed)

        order = _topological_order(self)
        for node in reversed(order):
            if node._backward is not None and node._grad is not None:
                node._backward(node._grad)

        # graph is single-use
        for node in order:
            node._parents = ()
            node._backward = None

    # operator sugar

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return add(self, neg(_as_tensor(other)))
    def __rsub__(self, other): return add(other, neg(self))
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return mul(self, 1.0 / other) if np.isscalar(other) else div(self, other)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return take(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.values.size if axis is None else int(np.prod([self.values.shape[a] for a in _axes(axis)]))
        return reduce_sum(self, axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes if axes else None)


def _axes(axis) -> Tuple[int, ...]:
    return (axis,) if isinstance(axis, int) else tuple(axis)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _make(values: np.ndarray, parents: Sequence[Tensor], op: str,
          backward: Callable[[np.ndarray], None]) -> Tensor:
    needs_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(values, requires_grad=needs_grad, _parents=tuple(parents) if needs_grad else (), _op=op)
    if needs_grad:
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.values + b.values, (a, b), "add", backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return _make(-a.values, (a,), "neg", backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.values, b.shape))

    return _make(a.values * b.values, (a, b), "mul", backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.values, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.values / (b.values * b.values), b.shape))

    return _make(a.values / b.values, (a, b), "div", backward)


def exp(a: Tensor) -> Tensor:
    out_values = np.exp(a.values)

    def backward(g):
        a._accumulate(g * out_values)

    return _make(out_values, (a,), "exp", backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g / a.values)

    return _make(np.log(a.values), (a,), "log", backward)


def relu(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g * (a.values > 0))

    return _make(np.maximum(a.values, 0), (a,), "relu", backward)


def gelu(a: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    x = a.values
    c = np.sqrt(2.0 / np.pi).astype(x.dtype)
    t = np.tanh(c * (x + 0.044715 * x * x * x))

    def backward(g):
        sech2 = 1.0 - t * t
        a._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * c * (1.0 + 3 * 0.044715 * x * x)))

    return _make(0.5 * x * (1.0 + t), (a,), "gelu", backward)


# shape


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            for ax in sorted(a_ % a.values.ndim for a_ in _axes(axis)):
                g = np.expand_dims(g, ax)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(a.values.sum(axis=axis, keepdims=keepdims), (a,), "sum", backward)


def reshape(a: Tensor, shape) -> Tensor:
    original = a.shape

    def backward(g):
        a._accumulate(g.reshape(original))

    return _make(a.values.reshape(shape), (a,), "reshape", backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.values.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(g.transpose(inverse))

    return _make(a.values.transpose(axes), (a,), "transpose", backward)


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.values.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def take(a: Tensor, index) -> Tensor:
    """Basic or fancy indexing; repeated indices accumulate in backward."""

    def backward(g):
        full = np.zeros_like(a.values)
        np.add.at(full, index, g)
        a._accumulate(full)

    return _make(a.values[index], (a,), "take", backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(np.concatenate([t.values for t in tensors], axis=axis), tuple(tensors), "concat", backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab_size = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        bad = int(ids[(ids < 0) | (ids >= vocab_size)].reshape(-1)[0])
        raise IndexError(f"token id {bad} outside vocabulary of size {vocab_size}")
    return take(table, ids)


# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim < 2 or b.values.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.values, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.values, -1, -2) @ g, b.shape))

    return _make(a.values @ b.values, (a, b), "matmul", backward)


# normalisations and losses


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _make(s, (x,), "softmax", backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        x._accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _make(y, (x,), "log_softmax", backward)


def cross_entropy(logits: Tensor, targets, ignore_index: Optional[int] = None,
                  reduction: str = "mean") -> Tensor:
    """Negative log-likelihood of ``targets`` under ``softmax(logits)``.

    Args:
        logits: (..., V) scores
        targets: integer array with the leading shape of ``logits``
        ignore_index: target value that contributes nothing (padding)
        reduction: "mean" over contributing positions, or "none" for the
            per-position values (ignored positions are 0)
    """
    targets = np.asarray(targets, dtype=np.int64)
    vocab_size = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    keep = np.ones(targets.shape, dtype=bool) if ignore_index is None else targets != ignore_index
    live = targets[keep]
    if live.size and (live.min() < 0 or live.max() >= vocab_size):
        raise IndexError(f"target id outside [0, {vocab_size})")
    if reduction == "mean" and not keep.any():
        raise ValueError("cross_entropy: no contributing positions")

    shifted = logits.values - logits.values.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_z
    safe_targets = np.where(keep, targets, 0)
    picked = np.take_along_axis(log_probs, safe_targets[..., None], axis=-1)[..., 0]
    per_position = np.where(keep, -picked, 0.0).astype(logits.values.dtype)
    count = int(keep.sum())

    def backward(g):
        weights = g if reduction == "none" else np.full(targets.shape, g.reshape(-1)[0] / count, dtype=g.dtype)
        weights = np.where(keep, weights, 0.0)
        probs = np.exp(log_probs)
        np.put_along_axis(probs, safe_targets[..., None],
                          np.take_along_axis(probs, safe_targets[..., None], axis=-1) - 1.0, axis=-1)
        logits._accumulate(probs * weights[..., None])

    if reduction == "none":
        return _make(per_position, (logits,), "cross_entropy", backward)
    if reduction != "mean":
        raise ValueError(f"unknown reduction '{reduction}'")
    return _make(np.asarray(per_position.sum() / count), (logits,), "cross_entropy", backward)


def cosine_similarity(u: Tensor, v: Tensor, eps: float = COSINE_EPS) -> Tensor:
    """Cosine over the last axis: u·v / (‖u‖‖v‖ + eps)."""
    if u.shape != v.shape:
        raise DimensionError(f"cosine_similarity shape mismatch: {u.shape} vs {v.shape}")
    dot = (u.values * v.values).sum(axis=-1)
    nu = np.sqrt((u.values * u.values).sum(axis=-1))
    nv = np.sqrt((v.values * v.values).sum(axis=-1))
    denom = nu * nv + eps
    out_values = dot / denom

    def unit(x, n):
        safe = np.where(n > 0, n, 1.0)[..., None]
        return np.where((n > 0)[..., None], x / safe, 0.0)

    def backward(g):
        g = g[..., None]
        d2 = (denom * denom)[..., None]
        if u.requires_grad:
            u._accumulate(g * (v.values / denom[..., None] - dot[..., None] * nv[..., None] * unit(u.values, nu) / d2))
        if v.requires_grad:
            v._accumulate(g * (u.values / denom[..., None] - dot[..., None] * nu[..., None] * unit(v.values, nv) / d2))

    return _make(out_values, (u, v), "cosine", backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm affine shape {gamma.shape}/{beta.shape} does not match width {d}")
    mu = x.values.mean(axis=-1, keepdims=True)
    centred = x.values - mu
    var = (centred * centred).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centred * inv_std
    lead = tuple(range(x.values.ndim - 1))

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * x_hat).sum(axis=lead))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=lead))
        if x.requires_grad:
            gx_hat = g * gamma.values
            x._accumulate(inv_std * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                                     - x_hat * (gx_hat * x_hat).mean(axis=-1, keepdims=True)))

    return _make(x_hat * gamma.values + beta.values, (x, gamma, beta), "layer_norm", backward)


# gradient checking


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of the scalar ``fn()`` w.r.t. every entry."""
    if not tensor.values.flags.c_contiguous:
        tensor.values = np.ascontiguousarray(tensor.values)
    grad = np.zeros(tensor.shape, dtype=np.float64)
    flat = tensor.values.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = float(fn().values.sum())
            flat[i] = original - h
            minus = float(fn().values.sum())
            flat[i] = original
            grad.reshape(-1)[i] = (plus - minus) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-2) -> float:
    """max |a - n| / max(|a|, |n|, floor), elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / scale).max()) if analytic.size else 0.0


def gradient_check(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-3) -> float:
    """Worst relative error between backward() and finite differences."""
    for t in tensors:
        t.zero_grad()
    fn().backward()
    analytic = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        worst = max(worst, max_relative_error(a, numerical_gradient(fn, t, h)))
    logger.debug(f"gradient_check over {len(tensors)} tensors: max rel. error {worst:.2e}")
    return worst
