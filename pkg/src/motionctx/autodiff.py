"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Graph` is an append-only tape. Every operation whose inputs are
attached to a graph appends one node holding its tag, the ids of its input
nodes and whatever forward values the gradient rule needs. Because inputs are
always recorded before their consumers, walking the tape backwards is a valid
reverse topological order.

Tensors built without a graph are plain constants: operations on them still
compute values but record nothing, and they never receive gradients.

Only scalar-with-tensor broadcasting is supported. Row-bias addition and
axis repetition are explicit operations with their own gradient rules.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class GradCheckError(ArithmeticError):
    pass


class Tensor:
    __slots__ = ("data", "graph", "node")

    def __init__(self, data, graph: "Graph | None" = None, node: int | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.graph = graph
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def attached(self) -> bool:
        return self.graph is not None

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, wrt: Iterable["Tensor"] = ()) -> "Gradients":
        if self.graph is None:
            raise ValueError("backward() called on a tensor that is not part of a graph")
        return self.graph.backward(self, wrt)

    def __repr__(self) -> str:
        state = f"node={self.node}" if self.attached else "detached"
        return f"Tensor(shape={self.shape}, {state})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass(frozen=True)
class Node:
    tag: str
    inputs: tuple[int | None, ...]
    saved: tuple


class Gradients:
    """Gradient store returned by :meth:`Graph.backward`.

    Indexing with a leaf tensor gives its gradient; leaves the loss does not
    depend on get zeros of the right shape.
    """

    def __init__(self, graph: "Graph", grads: dict[int, np.ndarray]):
        self._graph = graph
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if t.graph is not self._graph:
            return np.zeros(t.shape)
        g = self._grads.get(t.node)
        return np.zeros(t.shape) if g is None else g

    def __contains__(self, t: Tensor) -> bool:
        return t.graph is self._graph and t.node in self._grads


class Graph:
    """Append-only computation tape."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def variable(self, data) -> Tensor:
        """Register a leaf (parameter or input) that gradients should reach."""
        return self._append("leaf", (), (), np.array(data, dtype=DTYPE))

    def _append(self, tag, inputs, saved, out) -> Tensor:
        self.nodes.append(Node(tag, tuple(inputs), tuple(saved)))
        return Tensor(out, self, len(self.nodes) - 1)

    def backward(self, loss: Tensor, wrt: Iterable[Tensor] = ()) -> Gradients:
        if loss.graph is not self:
            raise ValueError("loss tensor belongs to a different graph")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.node: np.ones(loss.shape)}
        for idx in range(loss.node, -1, -1):
            g = grads.get(idx)
            node = self.nodes[idx]
            if g is None or not node.inputs:
                continue
            in_grads = GRADIENT_RULES[node.tag](g, *node.saved)
            for src, gi in zip(node.inputs, in_grads):
                if src is None or gi is None:
                    continue
                prev = grads.get(src)
                grads[src] = gi if prev is None else prev + gi
        out = Gradients(self, grads)
        for t in wrt:
            # materialize zeros for unused leaves so callers can rely on them
            if t.graph is self and t.node not in grads:
                grads[t.node] = np.zeros(t.shape)
        return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(tag: str, inputs: Sequence[Tensor], out: np.ndarray, saved: tuple = ()) -> Tensor:
    graph = None
    for t in inputs:
        if t.graph is not None:
            if graph is not None and t.graph is not graph:
                raise ValueError("cannot combine tensors from different graphs")
            graph = t.graph
    if graph is None:
        return Tensor(out)
    ids = [t.node if t.graph is graph else None for t in inputs]
    return graph._append(tag, ids, saved, out)


# ---------------------------------------------------------------------------
# gradient rules: tag -> fn(grad_out, *saved) -> tuple of input grads

def _unscalar(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


GRADIENT_RULES: dict[str, Callable[..., tuple]] = {
    "add": lambda g, sa, sb: (_unscalar(g, sa), _unscalar(g, sb)),
    "sub": lambda g, sa, sb: (_unscalar(g, sa), _unscalar(-g, sb)),
    "mul": lambda g, a, b: (_unscalar(g * b, a.shape), _unscalar(g * a, b.shape)),
    "scale": lambda g, c: (g * c,),
    "matmul": lambda g, a, b: (g @ b.T, a.T @ g),
    "transpose": lambda g: (g.T,),
    "reshape": lambda g, shape: (g.reshape(shape),),
    "add_bias": lambda g: (g, g.reshape(-1, g.shape[-1]).sum(axis=0)),
    "relu": lambda g, x: (g * (x > 0),),
    "sigmoid": lambda g, y: (g * y * (1.0 - y),),
    "tanh": lambda g, y: (g * (1.0 - y * y),),
    "softmax": lambda g, y: (y * (g - (g * y).sum(axis=-1, keepdims=True)),),
    "concat": lambda g, m: (g[..., :m], g[..., m:]),
    "slice": lambda g, shape, start, stop: (_pad_slice(g, shape, start, stop),),
    "repeat": lambda g, axis: (g.sum(axis=axis),),
    "weighted_sum": lambda g, w, v: (np.einsum("...d,...td->...t", g, v), w[..., None] * g[..., None, :]),
    "outer": lambda g, c: (((g + np.swapaxes(g, -1, -2)) @ c[..., None])[..., 0],),
    "sum": lambda g, shape: (np.broadcast_to(g, shape).copy(),),
    "gather_rows": lambda g, idx, n: (_scatter_rows(g, idx, n),),
}


def _pad_slice(g, shape, start, stop):
    out = np.zeros(shape)
    out[..., start:stop] = g
    return out


def _scatter_rows(g, idx, n):
    out = np.zeros((n, g.shape[-1]))
    np.add.at(out, idx, g)
    return out


# ---------------------------------------------------------------------------
# operations

def _check_same(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "add")
    return _record("add", (a, b), a.data + b.data, (a.shape, b.shape))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "sub")
    return _record("sub", (a, b), a.data - b.data, (a.shape, b.shape))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "mul")
    return _record("mul", (a, b), a.data * b.data, (a.data, b.data))


def elementwise(a, b, kind: str) -> Tensor:
    ops = {"add": add, "sub": sub, "mul": mul}
    if kind not in ops:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return ops[kind](a, b)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _record("scale", (a,), a.data * c, (float(c),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _record("matmul", (a, b), a.data @ b.data, (a.data, b.data))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {a.shape}")
    return _record("transpose", (a,), a.data.T.copy())


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _record("reshape", (a,), a.data.reshape(shape), (a.shape,))


def add_bias(x, b) -> Tensor:
    """x[..., n] + b[n], b added to every row."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or x.shape[-1:] != b.shape:
        raise ShapeError(f"add_bias: bias {b.shape} does not fit {x.shape}")
    return _record("add_bias", (x, b), x.data + b.data)


def activation(x, kind: str) -> Tensor:
    x = as_tensor(x)
    if kind == "relu":
        return _record("relu", (x,), np.maximum(x.data, 0.0), (x.data,))
    if kind == "sigmoid":
        y = _sigmoid(x.data)
        return _record("sigmoid", (x,), y, (y,))
    if kind == "tanh":
        y = np.tanh(x.data)
        return _record("tanh", (x,), y, (y,))
    raise ValueError(f"unknown activation {kind!r}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(x) -> Tensor:
    return activation(x, "relu")


def sigmoid(x) -> Tensor:
    return activation(x, "sigmoid")


def tanh(x) -> Tensor:
    return activation(x, "tanh")


def softmax(z) -> Tensor:
    """Softmax over the last axis."""
    z = as_tensor(z)
    if z.ndim == 0 or z.shape[-1] < 1:
        raise ShapeError("softmax needs at least one logit")
    e = np.exp(z.data - z.data.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)
    return _record("softmax", (z,), y, (y,))


def concat(a, b) -> Tensor:
    """Join along the last axis; leading dims must match."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat: incompatible shapes {a.shape} and {b.shape}")
    return _record("concat", (a, b), np.concatenate([a.data, b.data], axis=-1), (a.shape[-1],))


def take(a, start: int, stop: int) -> Tensor:
    """Slice ``a[..., start:stop]``."""
    a = as_tensor(a)
    n = a.shape[-1]
    if not 0 <= start <= stop <= n:
        raise ShapeError(f"slice [{start}:{stop}] out of range for last dim {n}")
    return _record("slice", (a,), a.data[..., start:stop].copy(), (a.shape, start, stop))


def split(a, m: int) -> tuple[Tensor, Tensor]:
    a = as_tensor(a)
    return take(a, 0, m), take(a, m, a.shape[-1])


def repeat(a, axis: int, count: int) -> Tensor:
    """Insert a new axis of length ``count`` holding copies of ``a``."""
    a = as_tensor(a)
    out = np.repeat(np.expand_dims(a.data, axis), count, axis=axis)
    return _record("repeat", (a,), out, (axis,))


def weighted_sum(weights, values) -> Tensor:
    """sum_t weights[..., t] * values[..., t, :]."""
    w, v = as_tensor(weights), as_tensor(values)
    if v.ndim < 2 or w.shape != v.shape[:-1]:
        raise ShapeError(f"weighted_sum: weights {w.shape} do not match values {v.shape}")
    out = np.einsum("...t,...td->...d", w.data, v.data)
    return _record("weighted_sum", (w, v), out, (w.data, v.data))


def outer(c) -> Tensor:
    """Self outer product over the last axis: c c^T."""
    c = as_tensor(c)
    out = c.data[..., :, None] * c.data[..., None, :]
    return _record("outer", (c,), out, (c.data,))


def total(a) -> Tensor:
    """Sum of every entry, as a scalar."""
    a = as_tensor(a)
    return _record("sum", (a,), np.asarray(a.data.sum()), (a.shape,))


def mean(a) -> Tensor:
    a = as_tensor(a)
    return scale(total(a), 1.0 / a.data.size)


def gather_rows(table, idx) -> Tensor:
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    return _record("gather_rows", (table,), table.data[idx], (idx, table.shape[0]))


# ---------------------------------------------------------------------------

def grad_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> float:
    """Largest relative disagreement between analytic and central-difference gradients.

    ``f`` maps a dict of named tensors to a scalar tensor. It is called once on
    graph leaves for the analytic gradient and then twice per parameter entry
    on detached tensors.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    base = {k: np.array(v, dtype=DTYPE) for k, v in params.items()}
    graph = Graph()
    leaves = {k: graph.variable(v) for k, v in base.items()}
    loss = f(leaves)
    grads = graph.backward(loss, leaves.values())

    def value(arrays) -> float:
        return f({k: Tensor(v) for k, v in arrays.items()}).item()

    worst = 0.0
    for name, arr in base.items():
        analytic = grads[leaves[name]]
        if not np.all(np.isfinite(analytic)):
            raise GradCheckError(f"non-finite analytic gradient for {name!r}")
        for i in np.ndindex(arr.shape):
            orig = arr[i]
            arr[i] = orig + h
            fp = value(base)
            arr[i] = orig - h
            fm = value(base)
            arr[i] = orig
            numeric = (fp - fm) / (2 * h)
            if not np.isfinite(numeric):
                raise GradCheckError(f"non-finite loss while perturbing {name!r}{list(i)}")
            a = analytic[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
