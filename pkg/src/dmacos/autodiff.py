"""A small dense-tensor engine with reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure that pushes the incoming gradient back to them.  The graph is rebuilt
on every forward pass; :func:`backward` orders it topologically from the loss
and visits each node once.

Shapes must match exactly.  The only implicit expansions are adding a row
vector to every row of a matrix (:func:`add_bias`) and scaling by a one-element
tensor (:func:`scale_by`).
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """An operation was called outside its precondition."""


class NumericError(ArithmeticError):
    """A non-finite value showed up where a finite one was required."""


_mode = threading.local()
# counts log() inputs that fell below the clamp floor; reset by callers
clamp_events = 0


def grad_enabled() -> bool:
    return getattr(_mode, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run the enclosed block without recording parents or backward rules."""
    prev = grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = prev


def reset_clamp_events() -> int:
    global clamp_events
    n = clamp_events
    clamp_events = 0
    return n


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, values, requires_grad=False, name=None):
        arr = np.asarray(values, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0:
            raise DimensionError("tensor must have positive dimensions, got shape %s" % (arr.shape,))
        self.values = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError("item() needs a one-element tensor, shape is %s" % (self.shape,))
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = " name=%r" % self.name if self.name else ""
        return "Tensor(shape=%s%s, requires_grad=%s)" % (self.shape, tag, self.requires_grad)

    # operator sugar; python scalars are accepted as constants
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __rsub__(self, other):
        return shift(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(values, requires_grad=False, name=None) -> Tensor:
    return Tensor(values, requires_grad=requires_grad, name=name)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def zeros(*shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad)


def _result(values: np.ndarray, parents: tuple, backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.name = None
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.values.shape != b.values.shape:
        raise DimensionError("%s: shape mismatch %s vs %s" % (op, a.shape, b.shape))


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _result(a.values + b.values, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _result(a.values - b.values, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    av, bv = a.values, b.values

    def bw(g):
        _accum(a, g * bv)
        _accum(b, g * av)

    return _result(av * bv, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        _accum(a, g * c)

    return _result(a.values * c, (a,), bw)


def shift(a: Tensor, c: float) -> Tensor:
    def bw(g):
        _accum(a, g)

    return _result(a.values + c, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.values
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        _accum(a, g * out * (1.0 - out))

    return _result(out, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.values)

    def bw(g):
        _accum(a, g * (1.0 - out * out))

    return _result(out, (a,), bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)

    def bw(g):
        _accum(a, g * out)

    return _result(out, (a,), bw)


def log(a: Tensor, floor: float = 1e-12) -> Tensor:
    """Natural log of ``max(a, floor)``; clamped entries get zero gradient."""
    global clamp_events
    x = a.values
    clamped = x < floor
    n = int(clamped.sum())
    if n:
        clamp_events += n
        x = np.where(clamped, floor, x)
    out = np.log(x)

    def bw(g):
        ga = g / x
        if n:
            ga = np.where(clamped, 0.0, ga)
        _accum(a, ga)

    return _result(out, (a,), bw)


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply every entry of ``a`` by the single entry of ``s``."""
    if s.values.size != 1:
        raise DimensionError("scale_by: scale must have one element, got shape %s" % (s.shape,))
    sv = s.values.reshape(-1)[0]
    av = a.values

    def bw(g):
        _accum(a, g * sv)
        _accum(s, np.array([np.sum(g * av)]).reshape(s.values.shape))

    return _result(av * sv, (a, s), bw)


ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "sigmoid": sigmoid, "tanh": tanh}


def elementwise(op: str, *operands: Tensor) -> Tensor:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ContractError("unknown elementwise op %r" % op) from None
    return fn(*operands)


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; either side may also be a vector (k,)."""
    av, bv = a.values, b.values
    if av.ndim > 2 or bv.ndim > 2 or av.shape[-1] != bv.shape[0]:
        raise DimensionError("matmul: cannot multiply %s by %s" % (a.shape, b.shape))
    out = av @ bv

    def bw(g):
        if a.requires_grad:
            if bv.ndim == 1:
                ga = np.multiply.outer(g, bv)
            else:
                ga = g @ bv.T
            _accum(a, ga)
        if b.requires_grad:
            if av.ndim == 1:
                gb = np.multiply.outer(av, g)
            else:
                gb = av.T @ g
            _accum(b, gb)

    return _result(out, (a, b), bw)


def add_bias(m: Tensor, bias: Tensor) -> Tensor:
    """Add a row vector to each row of ``m`` (or to a vector of equal length)."""
    if m.values.shape[-1:] != bias.values.shape or bias.values.ndim != 1:
        raise DimensionError("add_bias: %s cannot take bias %s" % (m.shape, bias.shape))

    def bw(g):
        _accum(m, g)
        _accum(bias, g if g.ndim == 1 else g.sum(axis=0))

    return _result(m.values + bias.values, (m, bias), bw)


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.values.shape

    def bw(g):
        _accum(a, np.full(shape, g[0]))

    return _result(np.array([a.values.sum()]), (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.values
    if x.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(a, out * (g - dot))

    return _result(out, (a,), bw)


# ---------------------------------------------------------------------------
# structural


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Join vectors end to end."""
    if any(p.values.ndim != 1 for p in parts):
        raise DimensionError("concat expects vectors, got %s" % [p.shape for p in parts])
    sizes = [p.values.shape[0] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                _accum(p, g[lo:hi])

    return _result(np.concatenate([p.values for p in parts]), tuple(parts), bw)


def stack(rows: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors into a matrix, one per row."""
    if not rows:
        raise DimensionError("stack of zero rows")
    first = rows[0].values.shape
    if any(r.values.shape != first or r.values.ndim != 1 for r in rows):
        raise DimensionError("stack: row shapes differ %s" % [r.shape for r in rows])

    def bw(g):
        for i, r in enumerate(rows):
            if r.requires_grad:
                _accum(r, g[i])

    return _result(np.stack([r.values for r in rows]), tuple(rows), bw)


def row(m: Tensor, i: int) -> Tensor:
    shape = m.values.shape

    def bw(g):
        full = np.zeros(shape)
        full[i] = g
        _accum(m, full)

    return _result(m.values[i].copy(), (m,), bw)


def take(a: Tensor, index: int) -> Tensor:
    """Pick one entry of a vector as a one-element tensor."""
    n = a.values.shape[0]

    def bw(g):
        full = np.zeros(n)
        full[index] = g[0]
        _accum(a, full)

    return _result(a.values[index:index + 1].copy(), (a,), bw)


def take_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Embedding lookup: rows of ``table`` at ``ids``, as a len(ids) x d matrix."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size == 0:
        raise DimensionError("take_rows with no ids")
    shape = table.values.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        _accum(table, full)

    return _result(table.values[idx], (table,), bw)


def pad_right(a: Tensor, extra: int) -> Tensor:
    """Append ``extra`` zeros to a vector."""
    if extra == 0:
        return a
    n = a.values.shape[0]

    def bw(g):
        _accum(a, g[:n])

    return _result(np.concatenate([a.values, np.zeros(extra)]), (a,), bw)


# ---------------------------------------------------------------------------
# backward pass


class Tape:
    """Operations reachable from a loss, in topological order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack_: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack_.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` on every tensor that ``loss`` depends on.

    Gradients add onto whatever is already stored, so callers zero parameter
    grads between steps.
    """
    if loss.values.size != 1:
        raise ContractError("backward needs a scalar loss, got shape %s" % (loss.shape,))
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    tape = Tape.from_loss(loss)
    loss.grad = np.ones_like(loss.values) if loss.grad is None else loss.grad + 1.0
    for node in reversed(tape.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            # intermediate grads are not needed once pushed to parents
            if node._parents:
                node.grad = None
    # release the graph so intermediates can be collected
    for node in tape.nodes:
        node._parents = ()
        node._backward = None
    return tape


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor] | Iterable[Tensor],
    eps: float = 1e-5,
    max_components: int | None = 64,
    floor: float = 1e-5,
    seed: int = 0,
) -> dict[str, float]:
    """Compare analytic gradients of ``f()`` to central differences.

    ``f`` rebuilds its graph from the current parameter values on each call.
    For tensors larger than ``max_components`` a random subset of that many
    entries is checked.  The relative error of one component is
    ``|a - n| / max(|a|, |n|, floor)``; the report holds the worst component
    per parameter.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    if not isinstance(params, dict):
        params = {p.name or "param%d" % i: p for i, p in enumerate(params)}
    for p in params.values():
        p.grad = None
    loss = f()
    if not np.all(np.isfinite(loss.values)):
        raise NumericError("f returned a non-finite value")
    backward(loss)
    rng = np.random.default_rng(seed)
    report = {}
    for name, p in params.items():
        analytic = np.zeros_like(p.values) if p.grad is None else p.grad.copy()
        flat = p.values.reshape(-1)
        n = flat.size
        if max_components is not None and n > max_components:
            idx = rng.choice(n, size=max_components, replace=False)
        else:
            idx = np.arange(n)
        worst = 0.0
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            with no_grad():
                hi = f().item()
            flat[j] = orig - eps
            with no_grad():
                lo = f().item()
            flat[j] = orig
            if not (math.isfinite(hi) and math.isfinite(lo)):
                raise NumericError("f is non-finite near %s[%d]" % (name, j))
            numeric = (hi - lo) / (2 * eps)
            a = analytic.reshape(-1)[j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
        report[name] = worst
    for p in params.values():
        p.grad = None
    return report
