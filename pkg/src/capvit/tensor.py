"""Minimal dense tensor with reverse-mode automatic differentiation.

Provides exactly the ops the transformer stack needs: matmul/linear,
softmax, layernorm, gelu, embedding lookup, cross-entropy, and the small
glue ops (add, mul, reshape, transpose, concat, reductions). Data lives
in row-major numpy arrays; float64 is the default so finite-difference
checks are meaningful, float32 is selectable for training.

The graph is the set of op-output tensors: each records its parents, a
backward closure, and a creation sequence number. backward() visits the
reachable nodes in exact reverse creation order, which for a single
forward pass is reverse insertion order. Calling backward twice on the
same output without a new forward raises GraphError.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateBatchError,
    GraphError,
    NumericError,
    ShapeError,
    VocabIndexError,
)

_seq_counter = itertools.count()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._seq = next(_seq_counter)
        self._done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{rg})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(np.broadcast_to(g, self.data.shape), dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if self._done:
            raise GraphError("backward already ran on this graph; run a new forward first")
        self._done = True
        if grad is None:
            if self.data.size != 1:
                raise GraphError("backward without an explicit seed needs a scalar output")
            grad = np.ones_like(self.data)
        # Reverse creation order over the reachable subgraph == reverse
        # insertion order of the ops that produced this output.
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            if t.requires_grad:
                nodes.append(t)
                stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq, reverse=True)
        self._accumulate(grad)
        for node in nodes:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node._backward = None  # graph is single-use

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swap_last2(self) -> "Tensor":
        return swap_last2(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(p for p in parents if p.requires_grad)
    out._backward = backward if out.requires_grad else None
    out._seq = next(_seq_counter)
    out._done = False
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    """Elementwise add with numpy broadcasting; non-Tensor operands take no grad."""
    if not isinstance(b, Tensor):
        a = _as_tensor(a)
        data = a.data + b

        def bw(g):
            a._accumulate(_unbroadcast(g, a.shape))

        return _make(data, [a], bw)
    a = _as_tensor(a)
    data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, [a, b], bw)


def mul(a, b) -> Tensor:
    """Elementwise multiply; `b` may be a scalar or broadcastable array."""
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        data = a.data * b

        def bw(g):
            a._accumulate(_unbroadcast(g * b, a.shape))

        return _make(data, [a], bw)
    data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, [a, b], bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; 2-D or batched with identical leading dims.

    Gradients: dA = dC @ B^T, dB = A^T @ dC (batched over leading dims).
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    if a.data.ndim != b.data.ndim or a.shape[:-2] != b.shape[:-2]:
        if not (a.data.ndim == 2 and b.data.ndim == 2):
            raise ShapeError(f"matmul batch dimensions differ: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accumulate(np.swapaxes(a.data, -1, -2) @ g)

    return _make(data, [a, b], bw)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x @ w (+ b) over the last axis, for any number of leading dims."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input width {x.shape} does not match weight {w.shape}")
    data = x.data @ w.data
    if b is not None:
        data = data + b.data

    def bw(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            x2 = x.data.reshape(-1, x.shape[-1])
            w._accumulate(x2.T @ g2)
        if b is not None and b.requires_grad:
            b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    parents = [x, w] if b is None else [x, w, b]
    return _make(data, parents, bw)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def bw(g):
        x._accumulate(g.reshape(x.shape))

    return _make(data, [x], bw)


def swap_last2(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = np.swapaxes(x.data, -1, -2)

    def bw(g):
        x._accumulate(np.swapaxes(g, -1, -2))

    return _make(data, [x], bw)


def swapaxes(x: Tensor, ax1: int, ax2: int) -> Tensor:
    x = _as_tensor(x)
    data = np.swapaxes(x.data, ax1, ax2)

    def bw(g):
        x._accumulate(np.swapaxes(g, ax1, ax2))

    return _make(data, [x], bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(p)

    return _make(data, tensors, bw)


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a 0-d tensor."""
    x = _as_tensor(x)
    data = np.asarray(x.data.sum(), dtype=x.dtype)

    def bw(g):
        x._accumulate(np.broadcast_to(g, x.shape).astype(x.dtype, copy=True))

    return _make(data, [x], bw)


def mean_axis(x: Tensor, axis: int) -> Tensor:
    x = _as_tensor(x)
    data = x.data.mean(axis=axis)
    n = x.shape[axis]

    def bw(g):
        x._accumulate(np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return _make(data, [x], bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along `axis`, computed with max subtraction for stability."""
    x = _as_tensor(x)
    if np.isnan(x.data).any():
        raise NumericError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        gy = g * data
        x._accumulate(gy - data * gy.sum(axis=axis, keepdims=True))

    return _make(data, [x], bw)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layernorm affine shapes {gamma.shape}/{beta.shape} do not match width {d}")
    if eps <= 0:
        raise ValueError("layernorm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = gamma.data * xhat + beta.data

    def bw(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gx - m1 - xhat * m2))

    return _make(data, [x, gamma, beta], bw)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    x = _as_tensor(x)
    v = x.data
    u = _GELU_C * (v + 0.044715 * (v * v * v))
    t = np.tanh(u)
    data = 0.5 * v * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * (v * v))
        x._accumulate(g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du))

    return _make(data, [x], bw)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of `table` by integer ids; backward scatter-adds."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    v = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        bad = int(ids.min()) if ids.min() < 0 else int(ids.max())
        raise VocabIndexError(f"id {bad} out of range for table with {v} rows")

    data = table.data[ids]

    def bw(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        table._accumulate(acc)

    return _make(data, [table], bw)


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_id: Optional[int] = None) -> Tensor:
    """Mean negative log-likelihood over non-ignored targets, via log-sum-exp."""
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects [n, V] logits, got {logits.shape}")
    targets = np.asarray(targets).reshape(-1)
    n, v = logits.shape
    if targets.shape[0] != n:
        raise ShapeError(f"cross_entropy: {n} logit rows vs {targets.shape[0]} targets")
    keep = np.ones(n, dtype=bool) if ignore_id is None else targets != ignore_id
    count = int(keep.sum())
    if count == 0:
        raise DegenerateBatchError("cross_entropy: every target is ignored")
    checked = targets[keep]
    if checked.min() < 0 or checked.max() >= v:
        bad = int(checked.min()) if checked.min() < 0 else int(checked.max())
        raise VocabIndexError(f"target id {bad} out of range for {v} classes")

    m = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=1)) + m[:, 0]
    safe_targets = np.where(keep, targets, 0)
    picked = logits.data[np.arange(n), safe_targets]
    data = np.asarray(((lse - picked) * keep).sum() / count, dtype=logits.dtype)

    def bw(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), safe_targets] -= 1.0
        p *= (keep / count)[:, None]
        logits._accumulate(p * g)

    return _make(data, [logits], bw)


def take_tokens(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather along axis 1 with per-example indices: out[b, m] = x[b, idx[b, m]]."""
    x = _as_tensor(x)
    idx = np.asarray(idx)
    b = x.shape[0]
    if idx.ndim != 2 or idx.shape[0] != b:
        raise ShapeError(f"index matrix {idx.shape} does not match batch {b}")
    rows = np.arange(b)[:, None]
    data = x.data[rows, idx]

    def bw(g):
        acc = np.zeros_like(x.data)
        np.add.at(acc, (rows, idx), g)
        x._accumulate(acc)

    return _make(data, [x], bw)


def slice_tokens(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice along axis 1; backward scatters into the original extent."""
    x = _as_tensor(x)
    data = x.data[:, start:stop]

    def bw(g):
        acc = np.zeros_like(x.data)
        acc[:, start:stop] = g
        x._accumulate(acc)

    return _make(data, [x], bw)


def texp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = np.exp(x.data)

    def bw(g):
        x._accumulate(g * data)

    return _make(data, [x], bw)


def trecip(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = 1.0 / x.data

    def bw(g):
        x._accumulate(-g * data * data)

    return _make(data, [x], bw)


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """Scale slices along `axis` to unit Euclidean norm."""
    x = _as_tensor(x)
    norm = np.sqrt((x.data**2).sum(axis=axis, keepdims=True) + 1e-30)
    data = x.data / norm

    def bw(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        x._accumulate((g - data * dot) / norm)

    return _make(data, [x], bw)


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-5,
    sample: Optional[int] = None,
    seed: int = 0,
    noise_floor: float = 0.0,
) -> float:
    """Max relative error between autodiff and central finite differences.

    `f` must be a pure zero-arg function of the given parameter tensors
    (re-running it after mutating param.data re-evaluates the model).
    Relative error is |a-b| / (|a|+|b|+1e-12). With `sample` set, at most
    that many coordinates per parameter are probed (seeded choice), which
    bounds runtime on larger models.

    Central differences at 64-bit carry rounding noise of roughly
    eps*|f|/h on each derivative, so derivatives smaller than that are
    unmeasurable no matter how correct the autodiff is. `noise_floor`
    treats a pair as matching when |a - b| is at or below it; 0 keeps the
    raw normalization.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = f()
    out.backward()
    grads = [None if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        idxs = np.arange(flat.size)
        if sample is not None and flat.size > sample:
            idxs = rng.choice(flat.size, size=sample, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            hi = f().item()
            flat[i] = orig - h
            lo = f().item()
            flat[i] = orig
            fd = (hi - lo) / (2 * h)
            a = g.reshape(-1)[i]
            if abs(a - fd) <= noise_floor:
                continue
            rel = abs(a - fd) / (abs(a) + abs(fd) + 1e-12)
            worst = max(worst, rel)
    return worst
