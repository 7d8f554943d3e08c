"""Small dense-tensor reverse-mode autodiff on top of numpy.

Values are float64 numpy arrays. A :class:`Node` records the op that produced
it together with a vector-Jacobian closure; :func:`backward` walks the graph
once in reverse topological order. Broadcasting is limited to scalar factors;
row-wise bias addition goes through the explicit :func:`broadcast_rows` op.
"""

from __future__ import annotations

from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

EPS_SQRT = 1e-12


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _check_finite(op: str, value: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op}: non-finite value in output")
    return value


class Node:
    """A value in the computation graph."""

    __slots__ = ("value", "parents", "op", "vjp", "name", "requires_grad")

    def __init__(self, value, parents=(), op="const", vjp=None, name=None, requires_grad=None):
        self.value = _check_finite(op, np.asarray(value, dtype=np.float64))
        self.parents: tuple[Node, ...] = tuple(parents)
        self.op = op
        self.vjp = vjp
        self.name = name
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.shape})"

    # operator sugar, all routed through the primitives below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def constant(x) -> Node:
    return Node(x, requires_grad=False)


def _same_shape(op: str, a: Node, b: Node):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {list(a.shape)} vs {list(b.shape)}")


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _same_shape("add", a, b)
    return Node(a.value + b.value, (a, b), "add", lambda g: (g, g))


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _same_shape("sub", a, b)
    return Node(a.value - b.value, (a, b), "sub", lambda g: (g, -g))


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return Node(av * bv, (a, b), "mul", lambda g: (g * bv, g * av))


def scale(a, c: float) -> Node:
    """Scalar times tensor, the only broadcasting allowed."""
    a = as_node(a)
    return Node(a.value * c, (a,), "scale", lambda g: (g * c,))


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {list(a.shape)} vs {list(b.shape)}")
    av, bv = a.value, b.value
    return Node(av @ bv, (a, b), "matmul", lambda g: (g @ bv.T, av.T @ g))


def concat(nodes: Sequence, axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat: no inputs")
    ndim = nodes[0].value.ndim
    axis = axis % ndim
    for n in nodes[1:]:
        other = [s for i, s in enumerate(n.shape) if i != axis]
        first = [s for i, s in enumerate(nodes[0].shape) if i != axis]
        if n.value.ndim != ndim or other != first:
            raise ShapeError(
                f"concat: shape mismatch {list(nodes[0].shape)} vs {list(n.shape)} on axis {axis}"
            )
    cuts = np.cumsum([n.shape[axis] for n in nodes])[:-1]
    return Node(
        np.concatenate([n.value for n in nodes], axis=axis),
        nodes,
        "concat",
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def stack(nodes: Sequence, axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    shapes = {n.shape for n in nodes}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shape mismatch {sorted(map(list, shapes))}")
    out = np.stack([n.value for n in nodes], axis=axis)
    axis = axis % out.ndim
    return Node(
        out,
        nodes,
        "stack",
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(nodes))),
    )


def take(a, index) -> Node:
    """Numpy-style indexing (basic or integer-array); gradient scatters back."""
    a = as_node(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return Node(np.array(a.value[index]), (a,), "slice", vjp)


def reshape(a, shape: Sequence[int]) -> Node:
    a = as_node(a)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot map {list(old)} to {list(shape)}") from exc
    return Node(out, (a,), "reshape", lambda g: (g.reshape(old),))


def transpose(a) -> Node:
    a = as_node(a)
    if a.value.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D input, got {list(a.shape)}")
    return Node(a.value.T.copy(), (a,), "transpose", lambda g: (g.T,))


def broadcast_rows(b, n: int) -> Node:
    """Repeat a vector ``[k]`` into ``[n, k]``."""
    b = as_node(b)
    if b.value.ndim != 1:
        raise ShapeError(f"broadcast_rows: expected 1-D input, got {list(b.shape)}")
    return Node(np.tile(b.value, (n, 1)), (b,), "broadcast_rows", lambda g: (g.sum(axis=0),))


def tanh(a) -> Node:
    a = as_node(a)
    y = np.tanh(a.value)
    return Node(y, (a,), "tanh", lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Node:
    a = as_node(a)
    x = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Node(y, (a,), "sigmoid", lambda g: (g * y * (1.0 - y),))


def sum(a, axis=None) -> Node:  # noqa: A001 - mirrors numpy naming
    a = as_node(a)
    shape = a.shape
    out = a.value.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.full(shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Node(out, (a,), "sum", vjp)


def mean(a, axis=None) -> Node:
    a = as_node(a)
    count = a.value.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / count)


def sqrt_eps(a) -> Node:
    """``sqrt(x + 1e-12)``; the only square root, so norms are smooth at zero."""
    a = as_node(a)
    if np.any(a.value + EPS_SQRT < 0):
        raise NonFiniteError("sqrt_eps: negative input")
    y = np.sqrt(a.value + EPS_SQRT)
    return Node(y, (a,), "sqrt_eps", lambda g: (g * 0.5 / y,))


def detach(a) -> Node:
    """Same value, cut from the graph."""
    a = as_node(a)
    return Node(a.value.copy(), (), "detach", requires_grad=False)


class ParamStore:
    """Ordered name -> float64 array map of trainable tensors."""

    def __init__(self, items: Iterable[tuple[str, np.ndarray]] = ()):
        self._data: dict[str, np.ndarray] = {}
        for name, value in items:
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self._data:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._data[name] = np.array(value, dtype=np.float64)

    def leaf(self, name: str) -> Node:
        return Node(self._data[name], (), "param", name=name, requires_grad=True)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._data[name]

    def __setitem__(self, name: str, value) -> None:
        if name not in self._data:
            raise KeyError(name)
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._data[name].shape:
            raise ShapeError(
                f"parameter {name!r}: shape {list(value.shape)} != {list(self._data[name].shape)}"
            )
        self._data[name] = value

    def __contains__(self, name) -> bool:
        return name in self._data

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def items(self):
        return self._data.items()

    def names(self) -> list[str]:
        return list(self._data)

    def copy(self) -> "ParamStore":
        return ParamStore((k, v.copy()) for k, v in self._data.items())

    def equals(self, other: "ParamStore", prefix: str = "") -> bool:
        """Bitwise equality restricted to names starting with ``prefix``."""
        mine = [k for k in self if k.startswith(prefix)]
        theirs = [k for k in other if k.startswith(prefix)]
        return mine == theirs and all(np.array_equal(self[k], other[k]) for k in mine)


def _toposort(root: Node) -> list[Node]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Node, params: ParamStore | None = None) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. every named parameter leaf.

    Leaves are matched by name, so a parameter used through several leaf
    nodes accumulates the sum of all paths. With ``params`` given, the result
    covers every name in the store (zeros where unreachable).
    """
    if loss.value.size != 1 or loss.value.ndim > 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {list(loss.shape)}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    out: dict[str, np.ndarray] = {}
    if params is not None:
        out = {name: np.zeros_like(value) for name, value in params.items()}
    if not loss.requires_grad:
        return out
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.name is not None and not node.parents:
            if node.name in out:
                out[node.name] = out[node.name] + g
            else:
                out[node.name] = g.copy()
            continue
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return out


def grad_check(
    f: Callable[[ParamStore], Node],
    params: ParamStore,
    h: float = 1e-5,
    names: Iterable[str] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The error per entry is ``|analytic - numeric| / max(1, |numeric|)``.
    ``f`` builds the loss graph from the store and must be deterministic.
    """
    if h <= 0:
        raise ValueError("grad_check: step must be positive")
    analytic = backward(f(params), params)
    worst = 0.0
    for name in names if names is not None else params.names():
        base = params[name]
        numeric = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            vals = []
            for sign in (1.0, -1.0):
                bumped = base.copy()
                bumped[idx] += sign * h
                params[name] = bumped
                try:
                    vals.append(float(f(params).value))
                except NonFiniteError as exc:
                    raise NonFiniteError(f"grad_check: parameter {name!r} at {idx}: {exc}") from exc
            numeric[idx] = (vals[0] - vals[1]) / (2 * h)
        params[name] = base
        err = np.abs(analytic[name] - numeric) / np.maximum(1.0, np.abs(numeric))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst

