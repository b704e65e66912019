"""Dense tensors with reverse-mode automatic differentiation.

Values live in numpy arrays; every differentiable operation returns a new
Tensor that remembers its inputs and a vector-Jacobian rule. `backward`
replays those rules once, in reverse topological order, and accumulates
d(loss)/d(t) into `.grad` additively (calling it twice doubles the grads).

Tensors default to float64; `set_default_dtype` switches new tensors to
float32. Gradient checking always runs in float64.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, EvaluationError, ParameterError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_default_dtype = np.float64
_grad_enabled = True


def set_default_dtype(dtype) -> None:
    """Set the dtype given to newly constructed tensors (float32 or float64)."""
    global _default_dtype
    dt = np.dtype(dtype)
    if dt not in _FLOAT_DTYPES:
        raise ParameterError(f"default dtype must be float32 or float64, got {dtype!r}")
    _default_dtype = dt.type


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block; forward passes become plain numpy."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A real-valued n-d array plus an optional gradient accumulator.

    `data` is the value, `grad` (same shape, lazily allocated) collects
    d(loss)/d(self) across backward calls. Leaf tensors are created directly;
    operation results additionally carry their parent tensors and a backward
    rule, which `backward` uses.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else _default_dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None

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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item: tensor has {self.data.size} elements")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def sum(self) -> "Tensor":
        """Sum of all elements as a scalar tensor."""
        shape = self.data.shape
        out = np.asarray(self.data.sum())
        return make_op(out, (self,), lambda g: (np.full(shape, g.item(), dtype=g.dtype),))

    def mean(self) -> "Tensor":
        """Mean of all elements as a scalar tensor."""
        n = self.data.size
        shape = self.data.shape
        out = np.asarray(self.data.mean())
        return make_op(out, (self,), lambda g: (np.full(shape, g.item() / n, dtype=g.dtype),))

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def narrow(self, axis: int, start: int, length: int) -> "Tensor":
        return narrow(self, axis, start, length)

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def make_op(data: np.ndarray, parents: tuple, vjp: Callable) -> Tensor:
    """Wrap an operation result, recording parents and the backward rule.

    The escape hatch for fused operations: `vjp(upstream)` must return one
    gradient array (or None) per parent. Recording is skipped when gradients
    are disabled or no parent requires them, so the result acts as a constant.
    """
    t = object.__new__(Tensor)
    t.data = np.asarray(data)
    t.grad = None
    record = _grad_enabled and any(p.requires_grad for p in parents)
    t.requires_grad = record
    t._parents = tuple(parents) if record else ()
    t._vjp = vjp if record else None
    return t


def _scalar_value(x):
    if isinstance(x, (int, float, np.integer, np.floating)):
        return float(x)
    return None


def _check_same_shape(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    """Elementwise a + b; shapes must match exactly, or one side is a plain number."""
    s = _scalar_value(b)
    if s is not None:
        return make_op(a.data + s, (a,), lambda g: (g,))
    s = _scalar_value(a)
    if s is not None:
        return make_op(b.data + s, (b,), lambda g: (g,))
    _check_same_shape(a, b, "add")
    return make_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    """Elementwise a - b; shapes must match exactly, or one side is a plain number."""
    s = _scalar_value(b)
    if s is not None:
        return make_op(a.data - s, (a,), lambda g: (g,))
    s = _scalar_value(a)
    if s is not None:
        return make_op(s - b.data, (b,), lambda g: (-g,))
    _check_same_shape(a, b, "sub")
    return make_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    """Elementwise a * b; shapes must match exactly, or one side is a plain number."""
    s = _scalar_value(b)
    if s is not None:
        return make_op(a.data * s, (a,), lambda g: (g * s,))
    s = _scalar_value(a)
    if s is not None:
        return make_op(b.data * s, (b,), lambda g: (g * s,))
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a, b) -> Tensor:
    """Dispatch on op name: one of add, sub, mul."""
    try:
        return _ELEMENTWISE[op](a, b)
    except KeyError:
        raise ParameterError(f"elementwise: unknown op {op!r}") from None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a 2-d tensor with a 2-d (or 1-d) tensor."""
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim not in (1, 2):
        raise DimensionError(f"matmul: unsupported ranks for {ad.shape} @ {bd.shape}")
    if ad.shape[1] != bd.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree: {ad.shape} @ {bd.shape}")
    out = ad @ bd
    if bd.ndim == 2:
        vjp = lambda g: (g @ bd.T, ad.T @ g)
    else:
        vjp = lambda g: (np.outer(g, bd), ad.T @ g)
    return make_op(out, (a, b), vjp)


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    """Logistic function on a raw array, overflow-free for any input."""
    x = np.asarray(x)
    pos = 1.0 / (1.0 + np.exp(-np.clip(x, 0.0, None)))
    ex = np.exp(np.clip(x, None, 0.0))
    neg = ex / (1.0 + ex)
    return np.where(x >= 0, pos, neg)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = sigmoid_values(a.data)
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_op(a.data * mask, (a,), lambda g: (g * mask,))


_ACTIVATIONS = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def activation(op: str, a: Tensor) -> Tensor:
    """Dispatch on op name: one of tanh, sigmoid, relu."""
    try:
        return _ACTIVATIONS[op](a)
    except KeyError:
        raise ParameterError(f"activation: unknown op {op!r}") from None


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along `axis`; inputs must agree on every other axis."""
    ts = list(tensors)
    if not ts:
        raise ContractError("concat: need at least one tensor")
    if len(ts) == 1:
        return ts[0]
    ndim = ts[0].ndim
    ax = axis + ndim if axis < 0 else axis
    if not 0 <= ax < ndim:
        raise DimensionError(f"concat: axis {axis} out of range for rank {ndim}")
    ref = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != ndim or other[:ax] + other[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise DimensionError(f"concat: shape mismatch {ts[0].shape} vs {t.shape} on axis {axis}")
    out = np.concatenate([t.data for t in ts], axis=ax)
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=ax))

    return make_op(out, tuple(ts), vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` elements starting at `start` along `axis` (differentiable)."""
    ndim = a.ndim
    ax = axis + ndim if axis < 0 else axis
    if not 0 <= ax < ndim:
        raise DimensionError(f"narrow: axis {axis} out of range for rank {ndim}")
    if start < 0 or length < 1 or start + length > a.shape[ax]:
        raise DimensionError(f"narrow: window [{start}, {start + length}) exceeds axis size {a.shape[ax]}")
    idx = tuple(slice(start, start + length) if d == ax else slice(None) for d in range(ndim))

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return make_op(a.data[idx], (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.data.shape
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


@dataclass
class Graph:
    """Topologically ordered record of one forward pass: inputs precede consumers."""

    nodes: list


def trace(root: Tensor) -> Graph:
    """Collect every tensor reachable from `root` in topological order."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return Graph(order)


def backward(loss: Tensor, graph: Graph | None = None) -> None:
    """Accumulate d(loss)/d(t) into `.grad` for every requires_grad tensor under `loss`.

    Each node's rule runs exactly once per call; gradients from earlier calls
    are kept and added to.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if graph is None:
        graph = trace(loss)
    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(graph.nodes):
        g = flowing.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            t.grad = g.copy() if t.grad is None else t.grad + g
        if t._vjp is None:
            continue
        for parent, pg in zip(t._parents, t._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = flowing.get(id(parent))
            flowing[id(parent)] = pg if acc is None else acc + pg


def check_gradients(forward_fn: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    `forward_fn` must rebuild the same scalar loss on every call; the checked
    tensors are perturbed in place one coordinate at a time. Relative error per
    coordinate is |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    for t in tensors:
        t.grad = None
    out = forward_fn()
    if out.data.size != 1:
        raise ContractError(f"check_gradients: function value must be scalar, got {out.shape}")
    if not np.all(np.isfinite(out.data)):
        raise EvaluationError("check_gradients: function value is not finite")
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    with no_grad():
        for t, an in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            aflat = an.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(forward_fn().data.reshape(()))
                flat[i] = orig - eps
                f_minus = float(forward_fn().data.reshape(()))
                flat[i] = orig
                if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                    raise EvaluationError("check_gradients: perturbed function value is not finite")
                num = (f_plus - f_minus) / (2.0 * eps)
                a = float(aflat[i])
                err = abs(a - num) / max(1e-8, abs(a) + abs(num))
                if err > worst:
                    worst = err
    return worst


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-3) -> float:
    """Gradient-check scalar-valued `f` at `x`; always runs in float64."""
    base = x.data if isinstance(x, Tensor) else np.asarray(x)
    xt = Tensor(np.array(base, dtype=np.float64), requires_grad=True)
    return check_gradients(lambda: f(xt), [xt], eps)
