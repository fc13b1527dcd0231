# tensor.py: dense tensors with tape-based reverse-mode gradients
#
# Define-by-run: every op executed while a Tape is active is appended to it,
# so the tape's node order is already topological. Ops executed with no active
# tape do not record anything (inference mode).
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractViolation, InvalidShapeError

EPS_CLAMP = 1e-7
DEFAULT_DTYPE = np.float64

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
Grads = Tuple[Optional[np.ndarray], ...]

_ACTIVE: List["Tape"] = []


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype.kind == "f" else DEFAULT_DTYPE
        self.data: np.ndarray = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    # -- properties --
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- operators --
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def mean(self) -> "Tensor":
        return tsum(self) / float(max(1, self.data.size))


class Parameter(Tensor):
    """A named trainable tensor with its own gradient accumulator."""

    def __init__(self, name: str, data, dtype=None):
        arr = np.array(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        super().__init__(arr, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


@dataclass(frozen=True)
class Node:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Grads]


class Tape:
    """Ordered record of the ops of one forward pass."""

    def __init__(self):
        self.nodes: List[Node] = []
        # set when a train-mode dropout mask was drawn on this tape
        self.stochastic = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        if _ACTIVE and _ACTIVE[-1] is self:
            _ACTIVE.pop()
        elif self in _ACTIVE:
            _ACTIVE.remove(self)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Optional[Tape]:
    return _ACTIVE[-1] if _ACTIVE else None


@contextmanager
def no_tape() -> Iterator[None]:
    saved = list(_ACTIVE)
    _ACTIVE.clear()
    try:
        yield
    finally:
        _ACTIVE[:] = saved


# ---------------- graph plumbing ---------------- #
def as_tensor(x: ArrayLike, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _pair(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor):
        return as_tensor(a, dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


def _result(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], vjp: Callable[[np.ndarray], Grads]) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(Node(op, inputs, out, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------- elementwise ---------------- #
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    return _result("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    return _result("div", a.data / b.data, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a: Tensor) -> Tensor:
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form stays finite for large |a|
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result("relu", a.data * mask, (a,), lambda g: (g * mask,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _result("clamp", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def detach(a: Tensor) -> Tensor:
    return Tensor(a.data, dtype=a.dtype)


# ---------------- linear algebra / reductions ---------------- #
def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise InvalidShapeError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise InvalidShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def vjp(g: np.ndarray) -> Grads:
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        if a.ndim == 1 and b.ndim == 2:
            return b.data @ g, np.outer(a.data, g)
        if a.ndim == 2 and b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g * b.data, g * a.data

    return _result("matmul", np.asarray(a.data @ b.data), (a, b), vjp)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g: np.ndarray) -> Grads:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result("sum", out, (a,), vjp)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return _result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(i is Ellipsis or isinstance(i, (slice, int, np.integer)) for i in items)


def getitem(a: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def vjp(g: np.ndarray) -> Grads:
        ga = np.zeros_like(a.data)
        if basic:
            ga[idx] += g
        else:
            # fancy indices may repeat
            np.add.at(ga, idx, g)
        return (ga,)

    return _result("getitem", np.array(a.data[idx]), (a,), vjp)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of `table`; repeated ids accumulate their gradients."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]})")

    def vjp(g: np.ndarray) -> Grads:
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _result("embedding", table.data[ids], (table,), vjp)


def softmax(v: Tensor) -> Tensor:
    if v.data.size == 0 or v.shape[-1] == 0:
        raise InvalidShapeError("softmax of an empty vector")
    z = v.data - v.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    return _result("softmax", out, (v,),
                   lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),))


def log_softmax(v: Tensor) -> Tensor:
    if v.data.size == 0 or v.shape[-1] == 0:
        raise InvalidShapeError("log_softmax of an empty vector")
    z = v.data - v.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    sm = np.exp(out)
    return _result("log_softmax", out, (v,),
                   lambda g: (g - sm * g.sum(axis=-1, keepdims=True),))


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """Inverted dropout: scale kept units by 1/(1-rate) at train time, identity otherwise."""
    if not train or rate <= 0.0:
        return x
    if rng is None:
        raise ContractViolation("train-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    tape = active_tape()
    if tape is not None:
        tape.stochastic = True
    return mul(x, Tensor(keep, dtype=x.dtype))


def sq_distance(a: Tensor, b: Tensor) -> Tensor:
    diff = a - b
    return tsum(diff * diff, axis=-1)


# ---------------- losses ---------------- #
def nll_categorical(logits: Tensor, y) -> Tensor:
    """-log softmax(logits)[y]; a (B, C) batch gives the sum over rows."""
    y_arr = np.asarray(y, dtype=np.int64)
    n_cls = logits.shape[-1] if logits.ndim else 0
    if n_cls == 0:
        raise InvalidShapeError("nll_categorical needs non-empty logits")
    if y_arr.size and (y_arr.min() < 0 or y_arr.max() >= n_cls):
        raise IndexError(f"class index out of range [0, {n_cls})")
    logp = log_softmax(logits)
    if logits.ndim == 1:
        if y_arr.ndim != 0:
            raise InvalidShapeError("a single logit vector takes a scalar class index")
        return neg(getitem(logp, int(y_arr)))
    if y_arr.shape != (logits.shape[0],):
        raise InvalidShapeError(f"labels shape {y_arr.shape} does not match batch {logits.shape[0]}")
    picked = getitem(logp, (np.arange(logits.shape[0]), y_arr))
    return neg(tsum(picked))


def nll_multilabel(probs: Tensor, z, eps: float = EPS_CLAMP) -> Tensor:
    """-sum_j [z_j log p_j + (1 - z_j) log(1 - p_j)] with p clamped to [eps, 1 - eps]."""
    z_arr = np.asarray(z, dtype=probs.dtype)
    if z_arr.shape != probs.shape:
        raise InvalidShapeError(f"probability shape {probs.shape} does not match targets {z_arr.shape}")
    p = clamp(probs, eps, 1.0 - eps)
    zt = Tensor(z_arr, dtype=probs.dtype)
    ll = zt * log(p) + (1.0 - zt) * log(1.0 - p)
    return neg(tsum(ll))


# ---------------- backward + gradient checking ---------------- #
def backward(tape: Tape, loss: Tensor, params: Optional[Iterable[Parameter]] = None) -> Dict[str, np.ndarray]:
    """
    Propagate d loss / d node through the tape in reverse order.
    Parameters accumulate into `.grad`; other reached nodes get `.grad` set.
    Returns {name: grad} for `params` (zeros for parameters the loss never used).
    """
    if loss.data.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    reached: Dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.output))
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                reached[key] = inp
    for key, t in reached.items():
        g = np.asarray(grads[key], dtype=t.dtype).reshape(t.shape)
        if isinstance(t, Parameter):
            t.grad = t.grad + g
        else:
            t.grad = g
    if params is None:
        return {}
    return {p.name: p.grad for p in params}


def _value(fn: Callable[[], Tensor]) -> float:
    with no_tape():
        return float(fn().data.reshape(-1)[0])


def grad_check(fn: Callable[[], Tensor], params: Sequence[Parameter],
               h: float = 1e-4, floor: float = 1e-8) -> float:
    """
    Max over every parameter coordinate of
    |analytic - numeric| / max(|analytic|, |numeric|, floor),
    numeric derivatives from a fourth-order central difference stencil.
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
    if tape.stochastic:
        raise ContractViolation("grad_check needs a deterministic function (dropout is enabled)")
    backward(tape, loss)
    analytic = {p.name: p.grad.copy() for p in params}

    base = _value(fn)
    if _value(fn) != base:
        raise ContractViolation("grad_check needs a deterministic function")

    worst = 0.0
    for p in params:
        numeric = np.zeros(p.data.size)
        for flat_i in range(p.data.size):
            idx = np.unravel_index(flat_i, p.shape)
            orig = p.data[idx]
            vals = []
            for step in (2.0, 1.0, -1.0, -2.0):
                p.data[idx] = orig + step * h
                vals.append(_value(fn))
            p.data[idx] = orig
            numeric[flat_i] = (-vals[0] + 8.0 * vals[1] - 8.0 * vals[2] + vals[3]) / (12.0 * h)
        a = analytic[p.name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    for p in params:
        p.zero_grad()
    return worst
