"""Dense-array compute kernel with reverse-mode differentiation.

Every differentiable operation the model needs lives in this module. Arrays
are plain numpy buffers wrapped in :class:`DiffArray`; each op that runs while
gradients are enabled appends a node to the implicit computation record by
giving its output a monotonically increasing node id and a backward closure.
Construction order is a topological order by construction, so ``backward()``
replays the reachable subgraph in reverse id order, visiting each node exactly
once and summing contributions when a node feeds several consumers.

Broadcasting in elementwise ops is restricted to leading batch dimensions:
two shapes are compatible iff they are equal, one is a suffix of the other,
or one is a scalar. This keeps the kernel small enough to audit. ``matmul``
additionally broadcasts batch dimensions the way numpy does.

Default precision is float32. Gradient checking runs in float64 (finite
differences are unusable at 32-bit); mixing dtypes inside one expression is
rejected rather than silently upcast.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from ..errors import ContractError, DegenerateMaskError, ShapeError

_node_counter = itertools.count()
_grad_enabled = True

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


@contextmanager
def no_grad():
    """Disable recording: ops inside the block produce constant outputs."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class DiffArray:
    """A dense n-d array that can participate in reverse-mode differentiation.

    ``grad`` is allocated lazily during backward and always matches ``data``
    in shape. Leaf arrays created with ``requires_grad=True`` are parameters;
    everything else is either a recorded intermediate or a constant.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_nid")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._nid = next(_node_counter)

    # -- basic introspection -------------------------------------------------

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

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "DiffArray":
        return DiffArray(self.data)

    def __repr__(self):
        return f"DiffArray(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- backward pass -------------------------------------------------------

    def backward(self):
        """Run reverse-mode accumulation from this scalar output.

        Gradients sum into ``.grad`` of every reachable array that requires
        gradients; call sites are responsible for zeroing between steps.
        """
        if self.size != 1:
            raise ContractError(
                f"backward() requires a scalar output, got shape {self.shape}"
            )
        nodes = []
        seen = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda n: n._nid, reverse=True)
        self.grad = np.ones_like(self.data)
        for node in nodes:
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def zero_grad(self):
        self.grad = None

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _lift(other, self))

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other, self))


def parameter(data) -> DiffArray:
    """Create a leaf array that accumulates gradients."""
    return DiffArray(np.asarray(data), requires_grad=True)


def constant(data) -> DiffArray:
    """Wrap raw data; never receives gradients."""
    return DiffArray(np.asarray(data))


def _lift(x, like: DiffArray) -> DiffArray:
    if isinstance(x, DiffArray):
        return x
    return DiffArray(np.asarray(x, dtype=like.dtype))


def _check_dtypes(*arrays: DiffArray):
    dtypes = {a.dtype for a in arrays}
    if len(dtypes) > 1:
        raise ContractError(f"mixed dtypes in one op: {sorted(str(d) for d in dtypes)}")


def _suffix_compatible(sa: tuple, sb: tuple) -> bool:
    if sa == sb:
        return True
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if len(small) == 0:
        return True
    return big[len(big) - len(small):] == small


def _check_broadcast(a: DiffArray, b: DiffArray, op: str):
    if not _suffix_compatible(a.shape, b.shape):
        raise ShapeError(
            f"{op}: shapes {a.shape} and {b.shape} are not equal and neither "
            f"is a trailing suffix of the other"
        )


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(data, parents, backward_fn) -> DiffArray:
    diff_parents = tuple(p for p in parents if p.requires_grad)
    if _grad_enabled and diff_parents:
        return DiffArray(data, requires_grad=True, _parents=diff_parents, _backward_fn=backward_fn)
    return DiffArray(data)


def _accum(node: DiffArray, g: np.ndarray):
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.zeros_like(node.data)
    node.grad += g


# -- elementwise arithmetic ----------------------------------------------------


def _lift_pair(a, b):
    if not isinstance(a, DiffArray):
        a = _lift(a, b)
    if not isinstance(b, DiffArray):
        b = _lift(b, a)
    return a, b


def add(a: DiffArray, b: DiffArray) -> DiffArray:
    a, b = _lift_pair(a, b)
    _check_dtypes(a, b)
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def backward(g):
        _accum(a, _reduce_to(g, a.shape))
        _accum(b, _reduce_to(g, b.shape))

    return _make(out, (a, b), backward)


def sub(a: DiffArray, b: DiffArray) -> DiffArray:
    a, b = _lift_pair(a, b)
    _check_dtypes(a, b)
    _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        _accum(a, _reduce_to(g, a.shape))
        _accum(b, _reduce_to(-g, b.shape))

    return _make(out, (a, b), backward)


def mul(a: DiffArray, b: DiffArray) -> DiffArray:
    a, b = _lift_pair(a, b)
    _check_dtypes(a, b)
    _check_broadcast(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        _accum(a, _reduce_to(g * b.data, a.shape))
        _accum(b, _reduce_to(g * a.data, b.shape))

    return _make(out, (a, b), backward)


def div(a: DiffArray, b: DiffArray) -> DiffArray:
    a, b = _lift_pair(a, b)
    _check_dtypes(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        _accum(a, _reduce_to(g / b.data, a.shape))
        _accum(b, _reduce_to(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), backward)


def neg(a: DiffArray) -> DiffArray:
    def backward(g):
        _accum(a, -g)

    return _make(-a.data, (a,), backward)


def exp(a: DiffArray) -> DiffArray:
    out = np.exp(a.data)

    def backward(g):
        _accum(a, g * out)

    return _make(out, (a,), backward)


def log(a: DiffArray) -> DiffArray:
    out = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _make(out, (a,), backward)


def gelu(a: DiffArray) -> DiffArray:
    """Exact Gaussian-error-linear unit, y = x * Phi(x)."""
    x = a.data
    phi_cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * phi_cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        _accum(a, g * (phi_cdf + x * pdf))

    return _make(out, (a,), backward)


# -- linear algebra ------------------------------------------------------------


def matmul(a: DiffArray, b: DiffArray) -> DiffArray:
    _check_dtypes(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul expects >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions incompatible: {a.shape} vs {b.shape}") from exc

    def backward(g):
        _accum(a, _reduce_to(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        _accum(b, _reduce_to(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, (a, b), backward)


def transpose(a: DiffArray, axes: tuple) -> DiffArray:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), backward)


def swapaxes(a: DiffArray, ax1: int, ax2: int) -> DiffArray:
    def backward(g):
        _accum(a, np.swapaxes(g, ax1, ax2))

    return _make(np.swapaxes(a.data, ax1, ax2), (a,), backward)


def reshape(a: DiffArray, shape) -> DiffArray:
    orig = a.shape

    def backward(g):
        _accum(a, g.reshape(orig))

    return _make(a.data.reshape(shape), (a,), backward)


def concat(arrays, axis: int) -> DiffArray:
    arrays = list(arrays)
    _check_dtypes(*arrays)
    sizes = [x.shape[axis] for x in arrays]
    out = np.concatenate([x.data for x in arrays], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for x, lo, hi in zip(arrays, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(x, g[tuple(idx)])

    return _make(out, tuple(arrays), backward)


def slice_axis(a: DiffArray, axis: int, start: int, stop: int) -> DiffArray:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def backward(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _make(a.data[idx], (a,), backward)


# -- reductions ------------------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def array_sum(a: DiffArray, axis=None, keepdims: bool = False) -> DiffArray:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        _accum(a, _expand_reduced(g, a.shape, axis, keepdims).copy())

    return _make(out, (a,), backward)


def mean(a: DiffArray, axis=None, keepdims: bool = False) -> DiffArray:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size // max(out.size, 1)

    def backward(g):
        _accum(a, _expand_reduced(g, a.shape, axis, keepdims) / count)

    return _make(out, (a,), backward)


# -- gathers and scatters ----------------------------------------------------------


def gather_rows(table: DiffArray, ids: np.ndarray) -> DiffArray:
    """Row lookup ``table[ids]``; table is [V, D], ids any integer shape."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(
            f"gather_rows ids out of range [0, {table.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    out = table.data[ids]

    def backward(g):
        if not table.requires_grad:
            return
        acc = np.zeros_like(table.data)
        np.add.at(acc, ids, g)
        _accum(table, acc)

    return _make(out, (table,), backward)


def gather_tokens(x: DiffArray, idx: np.ndarray) -> DiffArray:
    """Per-batch token selection: out[b, k] = x[b, idx[b, k]]."""
    idx = np.asarray(idx)
    if x.ndim != 3 or idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise ShapeError(f"gather_tokens expects x [B,N,D] and idx [B,K], got {x.shape}, {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise ContractError(f"gather_tokens idx out of range [0, {x.shape[1]})")
    b = np.arange(x.shape[0])[:, None]
    out = x.data[b, idx]

    def backward(g):
        if not x.requires_grad:
            return
        acc = np.zeros_like(x.data)
        np.add.at(acc, (b, idx), g)
        _accum(x, acc)

    return _make(out, (x,), backward)


def scatter_tokens(x: DiffArray, idx: np.ndarray, n_total: int) -> DiffArray:
    """Inverse of gather_tokens: place x[b, k] at out[b, idx[b, k]], zeros elsewhere.

    Indices must be unique within each batch row.
    """
    idx = np.asarray(idx)
    if x.ndim != 3 or idx.ndim != 2 or idx.shape[:2] != x.shape[:2]:
        raise ShapeError(f"scatter_tokens expects x [B,K,D] and idx [B,K], got {x.shape}, {idx.shape}")
    if idx.size:
        if idx.min() < 0 or idx.max() >= n_total:
            raise ContractError(f"scatter_tokens idx out of range [0, {n_total})")
        sorted_idx = np.sort(idx, axis=1)
        if idx.shape[1] > 1 and (sorted_idx[:, 1:] == sorted_idx[:, :-1]).any():
            raise ContractError("scatter_tokens requires unique indices per batch row")
    b = np.arange(x.shape[0])[:, None]
    out = np.zeros((x.shape[0], n_total, x.shape[2]), dtype=x.dtype)
    out[b, idx] = x.data

    def backward(g):
        _accum(x, g[b, idx])

    return _make(out, (x,), backward)


# -- fused neural-net ops ------------------------------------------------------------


def softmax(a: DiffArray, axis: int = -1) -> DiffArray:
    """Numerically stable softmax along ``axis`` (max-subtraction)."""
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (out * g).sum(axis=axis, keepdims=True)
        _accum(a, out * (g - inner))

    return _make(out, (a,), backward)


def layer_norm(x: DiffArray, gamma: DiffArray, beta: DiffArray, eps: float = 1e-5) -> DiffArray:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm gamma/beta must have shape ({d},), got {gamma.shape} and {beta.shape}"
        )
    _check_dtypes(x, gamma, beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accum(beta, g.sum(axis=reduce_axes))
        _accum(gamma, (g * xhat).sum(axis=reduce_axes))
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv_std * (dxhat - m1 - xhat * m2))

    return _make(out, (x, gamma, beta), backward)


def l2_normalize(x: DiffArray, axis: int = -1, eps: float = 1e-12) -> DiffArray:
    """Scale vectors along ``axis`` to unit Euclidean norm."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True) + eps)
    out = x.data / norm

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accum(x, (g - out * inner) / norm)

    return _make(out, (x,), backward)


def cross_entropy(logits: DiffArray, targets: np.ndarray) -> DiffArray:
    """Mean of -log softmax(logits)[i, targets[i]] over rows of a [N, V] array."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [N, V] logits, got {logits.shape}")
    targets = np.asarray(targets)
    n, v = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"cross_entropy targets must have shape ({n},), got {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise ContractError(f"cross_entropy target ids out of range [0, {v})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.data.max(axis=1)
    rows = np.arange(n)
    out = (lse - logits.data[rows, targets]).mean()

    def backward(g):
        if not logits.requires_grad:
            return
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[rows, targets] -= 1.0
        _accum(logits, g * probs / n)

    return _make(np.asarray(out, dtype=logits.dtype), (logits,), backward)


def mse(pred: DiffArray, target: DiffArray, mask: np.ndarray) -> DiffArray:
    """Mean squared error over the elements selected by a boolean mask."""
    if not isinstance(target, DiffArray):
        target = constant(np.asarray(target, dtype=pred.dtype))
    mask = np.asarray(mask)
    if mask.dtype != np.bool_:
        raise ContractError(f"mse mask must be boolean, got dtype {mask.dtype}")
    if mask.shape != pred.shape:
        raise ShapeError(f"mse mask shape {mask.shape} != pred shape {pred.shape}")
    if pred.shape != target.shape:
        raise ShapeError(f"mse pred shape {pred.shape} != target shape {target.shape}")
    count = int(mask.sum())
    if count == 0:
        raise DegenerateMaskError("mse mask selects zero elements")
    diff = pred.data - target.data
    out = np.asarray(((diff * diff) * mask).sum() / count, dtype=pred.dtype)

    def backward(g):
        scaled = (2.0 * g / count) * diff * mask
        _accum(pred, scaled)
        _accum(target, -scaled)

    return _make(out, (pred, target), backward)
