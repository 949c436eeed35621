"""Minimal dense-tensor arithmetic with reverse-mode automatic differentiation.

Values are numpy arrays; each op records its parents and a backward closure,
and ``Tensor.backward()`` walks the graph in reverse topological order.  The
op set is exactly what a small edit-policy transformer needs: matmul,
elementwise arithmetic, layer normalization, embedding lookup, tempered
softmax, cross-entropy / log-prob extraction, and slicing & shaping glue.

Training runs in float32 by default; gradient-check tests switch to float64
through the :func:`precision` context manager.
"""

from __future__ import annotations

import contextlib
import json
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

_DEFAULT_DTYPE = np.float32
_FINITE_CHECKS = True
_LOCAL = threading.local()  # grad mode is per-thread: read-only forwards may run concurrently


def _grad_enabled() -> bool:
    return getattr(_LOCAL, "grad_enabled", True)


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (float64 for gradient checks)."""
    global _DEFAULT_DTYPE
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (sampling, evaluation)."""
    old = _grad_enabled()
    _LOCAL.grad_enabled = False
    try:
        yield
    finally:
        _LOCAL.grad_enabled = old


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def _check_finite(arr: np.ndarray) -> None:
    if not _FINITE_CHECKS or arr.size == 0:
        return
    # sum() is NaN or Inf iff the array contains a NaN/Inf (cheaper than isfinite.all()
    # on every node; finite overflow of the sum itself is out of range at this scale)
    if not math.isfinite(float(arr.sum())):
        raise NumericError(f"non-finite values in tensor of shape {arr.shape}")


class Tensor:
    """A dense array plus optional gradient and autodiff bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            arr = data
        else:
            arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        _check_finite(self.data)

    # -- construction -----------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple["Tensor", ...],
                 backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._parents = ()
        out._backward = None
        out.requires_grad = False
        _check_finite(data)
        if _grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    # -- basic introspection ----------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- autodiff ----------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        ``self`` must be a scalar.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.shape}")
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
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                node._backward_dispatch(g, grads)
            elif node.requires_grad:
                node._accumulate(g)

    def _backward_dispatch(self, g: np.ndarray, grads: dict[int, np.ndarray]) -> None:
        parent_grads = self._backward(g)  # type: ignore[misc]
        for p, pg in zip(self._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if p._backward is None:
                p._accumulate(pg)
            else:
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g.astype(self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, mul(other, -1.0))
        return add(self, -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def relu(self):
        return relu(self)


class Parameter(Tensor):
    """A named trainable tensor; names are unique within a model."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    @property
    def tensor(self) -> Tensor:
        return self

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise ops ---------------------------------------------------------


def add(a, b) -> Tensor:
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        # plain constants (python scalars, numpy arrays) stay out of the graph
        const = np.asarray(b, dtype=a.data.dtype) if not np.isscalar(b) else b
        out = a.data + const

        def backward_const(g):
            return (_unbroadcast(g, a.data.shape),)

        return Tensor._from_op(out, (a,), backward_const)
    out = a.data + b.data

    def backward(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None)

    return Tensor._from_op(out, (a, b), backward)


def mul(a, b) -> Tensor:
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        const = np.asarray(b, dtype=a.data.dtype) if not np.isscalar(b) else b
        out = a.data * const

        def backward_const(g):
            return (_unbroadcast(g * const, a.data.shape),)

        return Tensor._from_op(out, (a,), backward_const)
    out = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None)

    return Tensor._from_op(out, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def backward(g):
        return (g * (a.data > 0),)

    return Tensor._from_op(out, (a,), backward)


# -- shaping -------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.data.shape),)

    return Tensor._from_op(out, (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inv),)

    return Tensor._from_op(out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [
        t if isinstance(t, Tensor) else Tensor(t) for t in tensors
    ]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(out, tuple(tensors), backward)


def getitem(a: Tensor, key) -> Tensor:
    out = a.data[key]

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[key] += g
        return (ga,)

    return Tensor._from_op(np.array(out, copy=True), (a,), backward)


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Index-select along ``axis``; repeated indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    out = np.take(a.data, idx, axis=axis)

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (slice(None),) * axis + (idx,), g)
        return (ga,)

    return Tensor._from_op(out, (a,), backward)


# -- reductions -----------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- linear algebra ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul requires tensors with ndim >= 2")
    if b.ndim > 2 and a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeError(
            f"matmul leading dims must match: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = gb = None
        if b.ndim == 2:
            if a.requires_grad:
                ga = g @ b.data.T
            if b.requires_grad:
                k, n = a.data.shape[-1], g.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            if a.requires_grad:
                ga = g @ b.data.swapaxes(-1, -2)
            if b.requires_grad:
                gb = a.data.swapaxes(-1, -2) @ g
        return (ga, gb)

    return Tensor._from_op(out, (a, b), backward)


# -- neural-net fused ops ------------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gx = ggain = gbias = None
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            gx = (inv * (dxhat - m1 - xhat * m2)).astype(x.data.dtype)
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            ggain = (g * xhat).sum(axis=lead)
        if bias.requires_grad:
            gbias = g.sum(axis=lead)
        return (gx, ggain, gbias)

    return Tensor._from_op(out, (x, gain, bias), backward)


def softmax_np(logits: np.ndarray, tau: float = 1.0, axis: int = -1) -> np.ndarray:
    """Plain-array tempered softmax (used for sampling; no graph)."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits in softmax")
    z = logits / tau
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax_np(logits: np.ndarray, tau: float = 1.0, axis: int = -1) -> np.ndarray:
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = logits / tau
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_tempered(logits: Tensor, tau: float, axis: int = -1) -> Tensor:
    """exp(y_i/tau) / sum_j exp(y_j/tau), with max subtraction for stability."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if logits.data.shape[axis] < 1:
        raise ShapeError("softmax axis must have at least one element")
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("non-finite logits in softmax")
    p = softmax_np(logits.data, tau=tau, axis=axis)

    def backward(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        return (((g - dot) * p / tau).astype(logits.data.dtype),)

    return Tensor._from_op(p, (logits,), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatters back with accumulation."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeError("embedding ids out of range")
    out = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (gt,)

    return Tensor._from_op(out, (table,), backward)


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over rows with mask > 0.

    ``logits`` is [N, C]; ``targets`` integer [N]; ``mask`` float [N] or None.
    """
    t = np.asarray(targets, dtype=np.int64)
    n, c = logits.data.shape
    if t.shape != (n,):
        raise ShapeError(f"targets shape {t.shape} does not match logits rows {n}")
    if mask is None:
        m = np.ones(n, dtype=logits.data.dtype)
    else:
        m = np.asarray(mask, dtype=logits.data.dtype)
    denom = float(m.sum())
    if denom <= 0:
        raise ValueError("cross_entropy mask selects no rows")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = logp[np.arange(n), t]
    loss = -(picked * m).sum() / denom

    def backward(g):
        p = np.exp(logp)
        gl = p * (m / denom)[:, None]
        gl[np.arange(n), t] -= m / denom
        return (g * gl,)

    return Tensor._from_op(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward)


def log_prob(logits: Tensor, indices, tau: float = 1.0) -> Tensor:
    """Per-row tempered log-probability log p(indices) for logits [N, C] -> [N]."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    idx = np.asarray(indices, dtype=np.int64)
    n, c = logits.data.shape
    if idx.shape != (n,):
        raise ShapeError(f"indices shape {idx.shape} does not match logits rows {n}")
    logp = log_softmax_np(logits.data, tau=tau)
    out = logp[np.arange(n), idx]

    def backward(g):
        p = np.exp(logp)
        gl = -p * (g[:, None] / tau)
        gl[np.arange(n), idx] += g / tau
        return (gl.astype(logits.data.dtype),)

    return Tensor._from_op(out, (logits,), backward)


# -- optimizer ----------------------------------------------------------------------


def ensure_grads(params: Iterable[Parameter]) -> None:
    """Zero-fill grads of parameters the last backward pass never reached."""
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def grad_global_norm(params: Iterable[Parameter]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return math.sqrt(total)


def sgd_step(params: Sequence[Parameter], lr: float,
             clip_norm: float | None = None) -> float:
    """One gradient-descent update; returns the pre-clip global gradient norm.

    Every parameter must have a populated grad; grads are cleared afterwards.
    """
    missing = [p.name for p in params if p.grad is None]
    if missing:
        raise ValueError(f"sgd_step called with missing grads: {missing[:4]}")
    norm = grad_global_norm(params)
    scale = 1.0
    if clip_norm is not None and norm > clip_norm > 0:
        scale = clip_norm / (norm + 1e-12)
    for p in params:
        p.data -= (lr * scale) * p.grad
        p.grad = None
    return norm


# -- checkpoint serialization --------------------------------------------------------


def save_params(path, params: Sequence[Parameter], meta: dict) -> None:
    """Write named parameters plus a JSON meta header to an .npz checkpoint."""
    arrays = {f"param/{p.name}": p.data for p in params}
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back a checkpoint: ({name: array}, meta dict)."""
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"].tobytes()).decode("utf-8"))
        arrays = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    return arrays, meta
