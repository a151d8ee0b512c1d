from __future__ import annotations

from typing import Callable, Iterable, Sequence, Union

import numpy as np
from scipy import special

from .errors import DomainError, NumericFault


# Array ops below accept plain numpy arrays or Nodes. With no Node among the
# operands they reduce to the numpy expression and nothing is recorded, so the
# same rendering and mixture code serves both training and oracle checks.

Vjp = Callable[[np.ndarray], np.ndarray]

# exp(l - L) for a zero-weight component can exceed double range; cap the exponent.
_MAX_EXP = 700.0


class Node:
    """A value recorded on a Tape together with the vector-Jacobian products to its parents."""

    __slots__ = ("tape", "index", "value", "parents")
    # Makes numpy defer to Node's reflected operators instead of building object arrays.
    __array_ufunc__ = None

    def __init__(self, tape: Tape, index: int, value: np.ndarray, parents: tuple[tuple[Node, Vjp], ...]) -> None:
        self.tape = tape
        self.index = index
        self.value = value
        self.parents = parents

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Node(#{self.index}, shape={self.shape})"

    def __add__(self, other: ArrayLike) -> Node:
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> Node:
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> Node:
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> Node:
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> Node:
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> Node:
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> Node:
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> Node:
        return div(other, self)

    def __neg__(self) -> Node:
        return neg(self)

    def __pow__(self, p: float) -> Node:
        return power(self, p)

    def __matmul__(self, other: ArrayLike) -> Node:
        return matmul(self, other)

    def __rmatmul__(self, other: ArrayLike) -> Node:
        return matmul(other, self)

    def __getitem__(self, idx) -> Node:
        return getitem(self, idx)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> Node:
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> Node:
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> Node:
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


ArrayLike = Union[np.ndarray, Node, float, int]
Array = Union[np.ndarray, Node]


class Tape:
    """Records operations in execution order; `backward` replays them in reverse.

    A tape has a single writer. Parameters are leaves registered by name and
    their gradients land in `grads` after `backward`.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}
        self.grads: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, value: np.ndarray, parents: Iterable[tuple[Node, Vjp]] = ()) -> Node:
        node = Node(self, len(self.nodes), np.asarray(value, dtype=np.float64), tuple(parents))
        self.nodes.append(node)
        return node

    def constant(self, value: ArrayLike) -> Node:
        return self.record(_value(value))

    def param(self, name: str, value: np.ndarray) -> Node:
        if name in self.params:
            return self.params[name]
        arr = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise NumericFault(f"parameter {name} is not finite at {tuple(int(i) for i in bad)}", index=name)
        node = self.record(arr)
        self.params[name] = node
        return node


def backward(tape: Tape, loss: Node) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of a scalar `loss` with respect to every tape parameter.

    Nodes are visited once, in reverse recording order (a reverse topological
    order). Parameters the loss does not reach get zero gradients.
    """

    if not isinstance(loss, Node) or loss.tape is not tape:
        raise DomainError("loss is not recorded on this tape")
    if loss.value.size != 1:
        raise DomainError(f"loss must be a scalar, got shape {loss.shape}")

    param_index = {node.index: name for name, node in tape.params.items()}
    pending: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
    found: dict[str, np.ndarray] = {}

    for node in reversed(tape.nodes[: loss.index + 1]):
        g = pending.pop(node.index, None)
        if g is None:
            continue
        name = param_index.get(node.index)
        if name is not None:
            found[name] = np.array(g, dtype=np.float64).reshape(node.shape)
        for parent, vjp in node.parents:
            contrib = vjp(g)
            prev = pending.get(parent.index)
            pending[parent.index] = contrib if prev is None else prev + contrib

    tape.grads = {name: found.get(name, np.zeros_like(node.value)) for name, node in tape.params.items()}
    return tape.grads


def _value(x: ArrayLike) -> np.ndarray:
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=np.float64)


value = _value


def _tape_of(*xs: object) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise DomainError("operands are recorded on different tapes")
    return tape


def _record(tape: Tape, out: np.ndarray, *pairs: tuple[object, Vjp]) -> Node:
    return tape.record(out, ((x, fn) for x, fn in pairs if isinstance(x, Node)))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def stop_gradient(x: ArrayLike) -> np.ndarray:
    return _value(x).copy()


def add(a: ArrayLike, b: ArrayLike) -> Array:
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    out = av + bv
    if tape is None:
        return out
    return _record(tape, out, (a, lambda g: _unbroadcast(g, av.shape)), (b, lambda g: _unbroadcast(g, bv.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Array:
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    out = av - bv
    if tape is None:
        return out
    return _record(tape, out, (a, lambda g: _unbroadcast(g, av.shape)), (b, lambda g: _unbroadcast(-g, bv.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Array:
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    out = av * bv
    if tape is None:
        return out
    return _record(tape, out, (a, lambda g: _unbroadcast(g * bv, av.shape)), (b, lambda g: _unbroadcast(g * av, bv.shape)))


def div(a: ArrayLike, b: ArrayLike) -> Array:
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    out = av / bv
    if tape is None:
        return out
    return _record(
        tape,
        out,
        (a, lambda g: _unbroadcast(g / bv, av.shape)),
        (b, lambda g: _unbroadcast(-g * out / bv, bv.shape)),
    )


def neg(x: ArrayLike) -> Array:
    tape = _tape_of(x)
    out = -_value(x)
    if tape is None:
        return out
    return _record(tape, out, (x, lambda g: -g))


def power(x: ArrayLike, p: float) -> Array:
    tape = _tape_of(x)
    xv = _value(x)
    out = xv**p
    if tape is None:
        return out
    return _record(tape, out, (x, lambda g: g * p * xv ** (p - 1)))


def square(x: ArrayLike) -> Array:
    tape = _tape_of(x)
    xv = _value(x)
    out = xv * xv
    if tape is None:
        return out
    return _record(tape, out, (x, lambda g: 2.0 * g * xv))


def sqrt(x: ArrayLike) -> Array:
    tape = _tape_of(x)
    out = np.sqrt(_value(x))
    if tape is None:
        return out
    safe = np.where(out > 0, out, 1.0)
    return _record(tape, out, (x, lambda g: np.where(out > 0, 0.5 * g / safe, 0.0)))


def matmul(a: ArrayLike, b: ArrayLike) -> Array:
    """2-D matrix product."""
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    out = av @ bv
    if tape is None:
        return out
    return _record(tape, out, (a, lambda g: g @ bv.T), (b, lambda g: av.T @ g))


def exp(x: ArrayLike) -> Array:
    tape = _tape_of(x)
    out = np.exp(_value(x))
    if tape is None:
        return out
    return _record(tape, out, (x, lambda g: g * out))


def expm1(x: ArrayLike) -> Array:
    tape = _tape_of(x)
    out = np.expm1(_value(x))
    if tape is None:
        return out
    return _record(tape, out, (x, lambda g: g * (out + 1.0)))


def log(x: ArrayLike) -> Array:
    tape = _tape_of(x)
    xv = _value(x)
    out = np.log(xv)
    if tape is None:
        return out
    return _record(tape, out, (x, lambda g: g / xv))


def absolute(x: ArrayLike) -> Array:
    tape = _tape_of(x)
    xv = _value(x)
    out = np.abs(xv)
    if tape is None:
        return out
    return _record(tape, out, (x, lambda g: g * np.sign(xv)))


def softplus(x: ArrayLike) -> Array:
    tape = _tape_of(x)
    xv = _value(x)
    out = np.logaddexp(0.0, xv)
    if tape is None:
        return out
    return _record(tape, out, (x, lambda g: g * special.expit(xv)))


def sigmoid(x: ArrayLike) -> Array:
    tape = _tape_of(x)
    out = special.expit(_value(x))
    if tape is None:
        return out
    return _record(tape, out, (x, lambda g: g * out * (1.0 - out)))


def relu(x: ArrayLike) -> Array:
    tape = _tape_of(x)
    xv = _value(x)
    out = np.maximum(xv, 0.0)
    if tape is None:
        return out
    return _record(tape, out, (x, lambda g: g * (xv > 0)))


def maximum(a: ArrayLike, b: ArrayLike) -> Array:
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    out = np.maximum(av, bv)
    if tape is None:
        return out
    pick_a = av >= bv
    return _record(
        tape,
        out,
        (a, lambda g: _unbroadcast(g * pick_a, av.shape)),
        (b, lambda g: _unbroadcast(g * ~pick_a, bv.shape)),
    )


def where(cond: np.ndarray, a: ArrayLike, b: ArrayLike) -> Array:
    """Select elementwise; `cond` is a constant mask."""
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, av, bv)
    if tape is None:
        return out
    return _record(
        tape,
        out,
        (a, lambda g: _unbroadcast(np.where(cond, g, 0.0), av.shape)),
        (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), bv.shape)),
    )


def reduce_sum(x: ArrayLike, axis: int | None = None, keepdims: bool = False) -> Array:
    tape = _tape_of(x)
    xv = _value(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)
    if tape is None:
        return out

    def vjp(g: np.ndarray) -> np.ndarray:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, xv.shape)

    return _record(tape, out, (x, vjp))


def reduce_max(x: ArrayLike, axis: int = -1) -> Array:
    """Maximum along `axis`; ties send the gradient to the first maximal entry."""
    tape = _tape_of(x)
    xv = _value(x)
    arg = np.expand_dims(np.argmax(xv, axis=axis), axis)
    out = np.squeeze(np.take_along_axis(xv, arg, axis=axis), axis=axis)
    if tape is None:
        return out

    def vjp(g: np.ndarray) -> np.ndarray:
        full = np.zeros_like(xv)
        np.put_along_axis(full, arg, np.expand_dims(g, axis), axis=axis)
        return full

    return _record(tape, out, (x, vjp))


def reduce_min(x: ArrayLike, axis: int = -1) -> Array:
    return neg(reduce_max(neg(x), axis=axis))


def reduce_mean(x: ArrayLike, axis: int | None = None, keepdims: bool = False) -> Array:
    n = _value(x).size if axis is None else _value(x).shape[axis]
    return div(reduce_sum(x, axis=axis, keepdims=keepdims), float(n))


def l2_norm(x: ArrayLike, axis: int = -1) -> Array:
    """Euclidean norm along `axis`; the gradient at the origin is taken as zero."""
    tape = _tape_of(x)
    xv = _value(x)
    out = np.sqrt(np.sum(xv * xv, axis=axis))
    if tape is None:
        return out
    safe = np.expand_dims(np.where(out > 0, out, 1.0), axis)
    nonzero = np.expand_dims(out > 0, axis)
    return _record(tape, out, (x, lambda g: np.where(nonzero, np.expand_dims(g, axis) * xv / safe, 0.0)))


def exclusive_cumsum(x: ArrayLike) -> Array:
    """out[..., j] = sum of x[..., :j] along the last axis."""
    tape = _tape_of(x)
    xv = _value(x)
    out = np.zeros_like(xv)
    out[..., 1:] = np.cumsum(xv[..., :-1], axis=-1)
    if tape is None:
        return out

    def vjp(g: np.ndarray) -> np.ndarray:
        tail = np.zeros_like(g)
        tail[..., :-1] = np.cumsum(g[..., :0:-1], axis=-1)[..., ::-1]
        return tail

    return _record(tape, out, (x, vjp))


def concatenate(xs: Sequence[ArrayLike], axis: int = -1) -> Array:
    tape = _tape_of(*xs)
    vals = [_value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if tape is None:
        return out
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    pairs = []
    for i, x in enumerate(xs):
        pairs.append((x, lambda g, i=i: np.split(g, bounds, axis=axis)[i]))
    return _record(tape, out, *pairs)


def getitem(x: ArrayLike, idx) -> Array:
    tape = _tape_of(x)
    xv = _value(x)
    out = xv[idx]
    if tape is None:
        return out

    def vjp(g: np.ndarray) -> np.ndarray:
        full = np.zeros_like(xv)
        np.add.at(full, idx, g)
        return full

    return _record(tape, np.array(out), (x, vjp))


def reshape(x: ArrayLike, shape: tuple[int, ...]) -> Array:
    tape = _tape_of(x)
    xv = _value(x)
    out = xv.reshape(shape)
    if tape is None:
        return out
    return _record(tape, out, (x, lambda g: np.reshape(g, xv.shape)))


def log_mix(log_comp: ArrayLike, weights: ArrayLike, axis: int = -1) -> Array:
    """log(sum_j weights_j * exp(log_comp_j)) along `axis`, stable via max-subtraction.

    Components with zero weight are skipped. Weights must be non-negative.
    """

    tape = _tape_of(log_comp, weights)
    lv, wv = np.broadcast_arrays(_value(log_comp), _value(weights))
    if np.any(wv < 0):
        raise DomainError("mixture weights must be non-negative")
    live = wv > 0
    masked = np.where(live, lv, -np.inf)
    peak = np.max(masked, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        total = np.sum(np.where(live, wv * np.exp(masked - peak), 0.0), axis=axis, keepdims=True)
        out_keep = peak + np.log(total)
    out = np.squeeze(out_keep, axis=axis)
    if tape is None:
        return out

    lshape, wshape = _value(log_comp).shape, _value(weights).shape

    def d_log_comp(g: np.ndarray) -> np.ndarray:
        resp = np.where(live, wv * np.exp(np.minimum(lv - out_keep, _MAX_EXP)), 0.0)
        return _unbroadcast(np.expand_dims(g, axis) * resp, lshape)

    def d_weights(g: np.ndarray) -> np.ndarray:
        return _unbroadcast(np.expand_dims(g, axis) * np.exp(np.minimum(lv - out_keep, _MAX_EXP)), wshape)

    return _record(tape, out, (log_comp, d_log_comp), (weights, d_weights))
