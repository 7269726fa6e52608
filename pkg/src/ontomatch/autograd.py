"""A small dense-tensor engine with reverse-mode automatic differentiation.

Arrays live in numpy (float64 while training). Every op records its parents
and a closure mapping the output gradient to parent gradients; ``backward``
walks the recorded graph once in reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64
NORM_GUARD = 1e-12


class ShapeMismatch(ValueError):
    pass


class NonFiniteInput(FloatingPointError):
    pass


class NotScalar(ValueError):
    pass


class GraphConsumed(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, _op: str = ""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward = _backward
        self._op = _op
        self._consumed = False

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op or 'leaf'!r})"

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
    def is_leaf(self) -> bool:
        return not self._parents and self._backward is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True)


def _result(data, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward_fn, op)
    return Tensor(data, _op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from exc


def _check_finite(x: np.ndarray, op: str, allow_neg_inf: bool = False) -> None:
    if allow_neg_inf:
        bad = np.isnan(x) | (x == np.inf)
    else:
        bad = ~np.isfinite(x)
    if bad.any():
        raise NonFiniteInput(f"{op}: non-finite input")


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data / b.data
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def scale(a: Tensor, s: float) -> Tensor:
    return _result(a.data * s, (a,), lambda g: (g * s,), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    _check_finite(a.data, "log")
    if (a.data <= 0).any():
        raise NonFiniteInput("log: input must be positive")
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


# ---------------------------------------------------------------- structural


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}") from exc

    def backward_fn(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward_fn, "matmul")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tensors, backward_fn, "concat")


def gather_rows(table: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    if table.ndim != 2:
        raise ShapeMismatch(f"gather_rows expects a 2-d table, got {table.shape}")

    def backward_fn(g):
        out = np.zeros_like(table.data)
        np.add.at(out, idx, g)
        return (out,)

    return _result(table.data[idx], (table,), backward_fn, "gather_rows")


def index(a: Tensor, key) -> Tensor:
    def backward_fn(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return (out,)

    return _result(a.data[key], (a,), backward_fn, "index")


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), backward_fn, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / float(n))


# ---------------------------------------------------------------- normalizing


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis; ``-inf`` entries get zero mass."""
    _check_finite(a.data, "softmax", allow_neg_inf=True)
    peak = a.data.max(axis=-1, keepdims=True)
    if np.isneginf(peak).any():
        raise NonFiniteInput("softmax: a row is entirely -inf")
    e = np.exp(a.data - peak)
    s = e / e.sum(axis=-1, keepdims=True)
    return _result(s, (a,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),), "softmax")


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def backward_fn(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv_std * (g - gm - xhat * gx),)

    return _result(xhat, (a,), backward_fn, "layer_norm")


def l2_norm(a: Tensor) -> Tensor:
    """Euclidean norm over the last axis. The gradient at a zero vector is 0."""
    n = np.sqrt((a.data**2).sum(axis=-1))

    def backward_fn(g):
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n[..., None] > 0, a.data / safe[..., None], 0.0) * g[..., None],)

    return _result(n, (a,), backward_fn, "l2_norm")


def normalize(a: Tensor) -> Tensor:
    return div(a, add(reshape(l2_norm(a), a.shape[:-1] + (1,)), NORM_GUARD))


def cosine_sim(a, b) -> Tensor:
    """Cosine similarity over the last axis; zero vectors score 0."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeMismatch(f"cosine_sim {a.shape} vs {b.shape}")
    return tsum(mul(normalize(a), normalize(b)), axis=-1)


# ---------------------------------------------------------------- losses


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean softmax cross-entropy of ``logits`` (M, C) against int targets (M,)."""
    target = np.asarray(target, dtype=np.intp).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != target.shape[0]:
        raise ShapeMismatch(f"cross_entropy logits {logits.shape} vs target {target.shape}")
    _check_finite(logits.data, "cross_entropy")
    m = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(m), target].mean()

    def backward_fn(g):
        grad = np.exp(logp)
        grad[np.arange(m), target] -= 1.0
        return (grad * (g / m),)

    return _result(loss, (logits,), backward_fn, "cross_entropy")


def bce(logit: Tensor, label) -> Tensor:
    """Mean binary cross-entropy on raw logits."""
    y = np.asarray(label, dtype=DTYPE)
    if logit.shape != y.shape:
        raise ShapeMismatch(f"bce logit {logit.shape} vs label {y.shape}")
    _check_finite(logit.data, "bce")
    x = logit.data
    m = max(x.size, 1)
    loss = (np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))).sum() / m
    return _result(loss, (logit,), lambda g: ((_sigmoid(x) - y) * (g / m),), "bce")


# ---------------------------------------------------------------- backward


def _topological(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf, then free the graph."""
    if loss.size != 1:
        raise NotScalar(f"backward needs a scalar, got shape {loss.shape}")
    if loss._consumed:
        raise GraphConsumed("backward already ran through this graph")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    for node in order:
        if node._consumed:
            raise GraphConsumed("graph contains a node freed by an earlier backward")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    for node in order:
        if not node.is_leaf:
            node._parents = ()
            node._backward = None
            node._consumed = True


# ---------------------------------------------------------------- checking


@dataclass
class GradCheckReport:
    indices: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    excluded: np.ndarray
    tol: float

    @property
    def max_error(self) -> float:
        kept = self.rel_error[~self.excluded]
        return float(kept.max()) if kept.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_elements: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
    kink_tol: float = 1e-3,
) -> GradCheckReport:
    """Compare backprop gradients of scalar ``f`` at ``x`` against central differences.

    ``rel_error = |a - n| / max(|a|, |n|, floor)``. Elements where the two
    one-sided differences disagree by more than ``kink_tol`` sit on a kink
    (e.g. relu at 0) and are excluded.
    """
    x.grad = None
    x.requires_grad = True
    f(x).backward()
    analytic_full = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None

    flat = x.data.reshape(-1)
    indices = np.arange(flat.size)
    if max_elements is not None and flat.size > max_elements:
        indices = np.sort(np.random.default_rng(seed).choice(flat.size, max_elements, replace=False))

    numeric = np.empty(len(indices))
    excluded = np.zeros(len(indices), dtype=bool)
    for n, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + eps
        up = f(x).item()
        flat[i] = orig - eps
        down = f(x).item()
        flat[i] = orig
        mid = f(x).item()
        numeric[n] = (up - down) / (2 * eps)
        fwd, bwd = (up - mid) / eps, (mid - down) / eps
        excluded[n] = abs(fwd - bwd) > kink_tol * max(1.0, abs(numeric[n]))

    analytic = analytic_full.reshape(-1)[indices]
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return GradCheckReport(indices, analytic, numeric, np.abs(analytic - numeric) / denom, excluded, tol)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are not mutated."""
    if len(params) != len(grads):
        raise ShapeMismatch("params and grads differ in length")
    m_prev = state.m or [np.zeros_like(p) for p in params]
    v_prev = state.v or [np.zeros_like(p) for p in params]
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, m_prev, v_prev):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeMismatch(f"adam: grad {g.shape} vs param {p.shape}")
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(t, new_m, new_v)


class Adam:
    """In-place Adam over a list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        new, self.state = adam_step(
            [p.data for p in self.params],
            [p.grad for p in self.params],
            self.state,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
        )
        for p, d in zip(self.params, new):
            p.data = d
