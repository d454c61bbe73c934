"""Define-by-run reverse-mode differentiation over the tensor kernels.

A :class:`Graph` records every operation as a :class:`Node` and evaluates it
immediately.  Leaves are either named parameters (``param``) or anonymous
inputs (``leaf``); constants are recorded but never differentiated.  After
a leaf value is replaced with :meth:`Graph.set_value` the graph is stale
until :meth:`Graph.forward` re-evaluates it in creation order, which is also
how :func:`gradcheck` perturbs coordinates.

:class:`Direct` exposes the same op surface but works on bare tensors, so
model and loss code can be evaluated without recording anything.  Both
paths call the same kernels, so their results agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import DomainError, GraphStateError, ShapeError
from .tensor import Tensor

# elementwise ops with a non-differentiable point: kind -> kink location
_KINKED = {"relu": lambda c: 0.0, "hinge_below": lambda c: c}


@dataclass(eq=False)
class Node:
    id: int
    op: str
    inputs: tuple[int, ...]
    value: Tensor
    attrs: dict = field(default_factory=dict)
    name: str | None = None
    grad: Tensor | None = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.id}, {self.op}{label}, shape={self.shape})"


def _forward_value(op: str, args: list[Tensor], attrs: dict) -> Tensor:
    if op == "matmul":
        return T.matmul(*args)
    if op == "reduce":
        return T.reduce(args[0], attrs["axis"], attrs["kind"])
    if op == "map":
        return T.map(args[0], attrs["kind"], attrs.get("c"))
    if op in ("add", "sub", "mul", "div", "add_row", "scale_rows", "scale_cols"):
        return getattr(T, op)(*args)
    if op == "transpose":
        return T.transpose(args[0])
    if op == "reshape":
        return T.reshape(args[0], attrs["shape"])
    if op == "stack":
        return T.stack(args, attrs["axis"])
    if op == "concat":
        return T.concat(args, attrs["axis"])
    raise ValueError(f"unknown op {op!r}")


def _expand(g: np.ndarray, axis: int, shape: tuple[int, ...]) -> np.ndarray:
    kept = shape[:axis] + shape[axis + 1:]
    return np.broadcast_to(np.expand_dims(g.reshape(kept), axis), shape)


def _vjp(node: Node, ins: list[np.ndarray], g: np.ndarray) -> list[np.ndarray]:
    """Vector-Jacobian products of ``node`` w.r.t. each of its inputs."""
    op, attrs = node.op, node.attrs
    out = node.value.array
    if op == "matmul":
        a, b = ins
        return [g @ b.T, a.T @ g]
    if op == "add":
        return [g, g]
    if op == "sub":
        return [g, -g]
    if op == "mul":
        a, b = ins
        return [g * b, g * a]
    if op == "div":
        a, b = ins
        return [g / b, -g * a / (b * b)]
    if op == "add_row":
        return [g, g.sum(axis=0)]
    if op == "scale_rows":
        x, s = ins
        return [g * s[:, None], (g * x).sum(axis=1)]
    if op == "scale_cols":
        x, s = ins
        return [g * s[None, :], (g * x).sum(axis=0)]
    if op == "transpose":
        return [g.T]
    if op == "reshape":
        return [g.reshape(ins[0].shape)]
    if op == "stack":
        ax = attrs["axis"]
        return [np.take(g, i, axis=ax) for i in range(len(ins))]
    if op == "concat":
        ax = attrs["axis"]
        cuts = np.cumsum([x.shape[ax] for x in ins])[:-1]
        return np.split(g, cuts, axis=ax)
    if op == "reduce":
        (x,) = ins
        ax, kind = attrs["axis"], attrs["kind"]
        n = x.shape[ax]
        ge = _expand(g, ax, x.shape)
        if kind == "sum":
            return [np.array(ge)]
        if kind == "mean":
            return [ge / n]
        mean = x.sum(axis=ax, keepdims=True) / n
        return [ge * (2.0 / (n - 1)) * (x - mean)]
    if op == "map":
        (x,) = ins
        kind, c = attrs["kind"], attrs.get("c")
        if kind == "relu":
            return [g * (x > 0)]
        if kind == "sqrt":
            if (x == 0).any():
                raise DomainError(f"sqrt derivative undefined at 0 (node {node.id})")
            return [g * 0.5 / out]
        if kind == "exp":
            return [g * out]
        if kind == "log":
            return [g / x]
        if kind == "negate":
            return [-g]
        if kind == "add_scalar":
            return [g]
        if kind == "mul_scalar":
            return [g * c]
        if kind == "hinge_below":
            # derivative at the kink is defined as 0
            return [-g * (x < c)]
    raise ValueError(f"no derivative rule for {op!r}")


class Graph:
    """Append-only computation graph; topological order is creation order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: list[int] = []
        self._params: dict[str, Node] = {}
        self._stale = False

    # -- construction ------------------------------------------------------

    def _new(self, op, inputs, value, attrs=None, name=None) -> Node:
        node = Node(len(self.nodes), op, tuple(inputs), value, attrs or {}, name)
        self.nodes.append(node)
        return node

    def leaf(self, value, name: str | None = None) -> Node:
        node = self._new("leaf", (), T.as_tensor(value), name=name)
        self.leaves.append(node.id)
        return node

    def param(self, name: str, value) -> Node:
        """Leaf registered under ``name``; repeated calls return the same node."""
        if name in self._params:
            return self._params[name]
        node = self.leaf(value, name)
        self._params[name] = node
        return node

    def const(self, value) -> Node:
        return self._new("const", (), T.as_tensor(value))

    @property
    def params(self) -> dict[str, Node]:
        return dict(self._params)

    def _op(self, op: str, inputs: Sequence[Node], **attrs) -> Node:
        if self._stale:
            raise GraphStateError("graph is stale; call forward() before adding ops")
        for x in inputs:
            if not isinstance(x, Node) or x.id >= len(self.nodes) or self.nodes[x.id] is not x:
                raise GraphStateError(f"input {x!r} does not belong to this graph")
        value = _forward_value(op, [x.value for x in inputs], attrs)
        return self._new(op, [x.id for x in inputs], value, attrs)

    def matmul(self, a, b):
        return self._op("matmul", [a, b])

    def reduce(self, x, axis: int, kind: str):
        return self._op("reduce", [x], axis=axis, kind=kind)

    def map(self, x, kind: str, c: float | None = None):
        attrs = {"kind": kind}
        if c is not None:
            attrs["c"] = float(c)
        return self._op("map", [x], **attrs)

    def add(self, a, b):
        return self._op("add", [a, b])

    def sub(self, a, b):
        return self._op("sub", [a, b])

    def mul(self, a, b):
        return self._op("mul", [a, b])

    def div(self, a, b):
        return self._op("div", [a, b])

    def add_row(self, x, row):
        return self._op("add_row", [x, row])

    def scale_rows(self, x, s):
        return self._op("scale_rows", [x, s])

    def scale_cols(self, x, s):
        return self._op("scale_cols", [x, s])

    def transpose(self, x):
        return self._op("transpose", [x])

    def reshape(self, x, shape):
        return self._op("reshape", [x], shape=tuple(shape))

    def stack(self, xs, axis: int = 0):
        return self._op("stack", list(xs), axis=axis)

    def concat(self, xs, axis: int = 0):
        return self._op("concat", list(xs), axis=axis)

    @staticmethod
    def value(x: Node) -> Tensor:
        return x.value

    # -- evaluation --------------------------------------------------------

    def set_value(self, leaf: Node | int, value) -> None:
        node = self.nodes[leaf if isinstance(leaf, int) else leaf.id]
        if node.op != "leaf":
            raise GraphStateError(f"node {node.id} is not a leaf")
        value = T.as_tensor(value)
        if value.shape != node.value.shape:
            raise ShapeError(f"leaf {node.id} has shape {node.value.shape}, got {value.shape}")
        node.value = value
        self._stale = True

    def forward(self, root: Node | int | None = None) -> float | None:
        """Re-evaluate every derived node from the current leaf values."""
        for node in self.nodes:
            if node.op in ("leaf", "const"):
                continue
            args = [self.nodes[i].value for i in node.inputs]
            node.value = _forward_value(node.op, args, node.attrs)
            node.grad = None
        self._stale = False
        if root is None:
            return None
        r = self._node(root)
        if r.value.size != 1:
            raise ShapeError(f"root {r.id} is not scalar (shape {r.value.shape})")
        return r.value.item()

    def backward(self, root: Node | int) -> dict[int, Tensor]:
        """Gradient of ``root`` w.r.t. every leaf, keyed by leaf id.

        Every node on a path to the root also gets its ``grad`` set.
        Leaves that do not influence the root receive exact zeros.
        """
        if self._stale:
            raise GraphStateError("backward called before forward on modified leaves")
        r = self._node(root)
        if r.value.size != 1:
            raise ShapeError(f"root {r.id} is not scalar (shape {r.value.shape})")
        for node in self.nodes:
            node.grad = None
        grads: dict[int, np.ndarray] = {r.id: np.ones(r.value.shape)}
        for node in reversed(self.nodes[: r.id + 1]):
            g = grads.pop(node.id, None)
            if g is None:
                continue
            node.grad = Tensor._wrap(g)
            if not node.inputs:
                continue
            ins = [self.nodes[i].value.array for i in node.inputs]
            for i, gi in zip(node.inputs, _vjp(node, ins, g)):
                if self.nodes[i].op == "const":
                    continue
                if i in grads:
                    grads[i] = grads[i] + gi
                else:
                    grads[i] = np.array(gi, dtype=np.float64)
        out = {}
        for lid in self.leaves:
            node = self.nodes[lid]
            out[lid] = node.grad if node.grad is not None else Tensor.zeros(*node.value.shape)
        return out

    def param_grads(self, grads: dict[int, Tensor]) -> dict[str, Tensor]:
        return {name: grads[node.id] for name, node in self._params.items()}

    def _node(self, ref: Node | int) -> Node:
        i = ref.id if isinstance(ref, Node) else int(ref)
        if not 0 <= i < len(self.nodes):
            raise GraphStateError(f"node {i} does not exist")
        return self.nodes[i]

    def _kink_signature(self) -> list[np.ndarray]:
        sig = []
        for node in self.nodes:
            if node.op == "map" and node.attrs["kind"] in _KINKED:
                kink = _KINKED[node.attrs["kind"]](node.attrs.get("c"))
                x = self.nodes[node.inputs[0]].value.array
                sig.append(np.sign(x - kink))
        return sig


class Direct:
    """Non-recording twin of :class:`Graph`: ops act on tensors directly."""

    def param(self, name: str, value) -> Tensor:
        return T.as_tensor(value)

    def leaf(self, value, name=None) -> Tensor:
        return T.as_tensor(value)

    const = leaf

    def matmul(self, a, b):
        return T.matmul(a, b)

    def reduce(self, x, axis, kind):
        return T.reduce(x, axis, kind)

    def map(self, x, kind, c=None):
        return T.map(x, kind, None if c is None else float(c))

    def add(self, a, b):
        return T.add(a, b)

    def sub(self, a, b):
        return T.sub(a, b)

    def mul(self, a, b):
        return T.mul(a, b)

    def div(self, a, b):
        return T.div(a, b)

    def add_row(self, x, row):
        return T.add_row(x, row)

    def scale_rows(self, x, s):
        return T.scale_rows(x, s)

    def scale_cols(self, x, s):
        return T.scale_cols(x, s)

    def transpose(self, x):
        return T.transpose(x)

    def reshape(self, x, shape):
        return T.reshape(x, shape)

    def stack(self, xs, axis=0):
        return T.stack(xs, axis)

    def concat(self, xs, axis=0):
        return T.concat(xs, axis)

    @staticmethod
    def value(x: Tensor) -> Tensor:
        return x


DIRECT = Direct()


def ops_for(graph: Graph | None):
    return DIRECT if graph is None else graph


def value_of(x) -> Tensor:
    return x.value if isinstance(x, Node) else x


# ------------------------------------------------------------ module-level API


def forward(graph: Graph, root: Node | int) -> float:
    return graph.forward(root)


def backward(graph: Graph, root: Node | int) -> dict[int, Tensor]:
    return graph.backward(root)


def rel_error(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


@dataclass
class LeafCheck:
    leaf_id: int
    name: str | None
    checked: int
    skipped: list[tuple[int, ...]]
    max_rel_error: float
    passed: bool


@dataclass
class GradcheckReport:
    step: float
    tol: float
    leaves: list[LeafCheck]

    @property
    def passed(self) -> bool:
        return all(leaf.passed for leaf in self.leaves)

    @property
    def max_rel_error(self) -> float:
        return max((leaf.max_rel_error for leaf in self.leaves), default=0.0)

    @property
    def n_skipped(self) -> int:
        return sum(len(leaf.skipped) for leaf in self.leaves)

    @property
    def n_checked(self) -> int:
        return sum(leaf.checked for leaf in self.leaves)

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "tol": self.tol,
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "checked": self.n_checked,
            "skipped": self.n_skipped,
            "leaves": [
                {
                    "id": leaf.leaf_id,
                    "name": leaf.name,
                    "checked": leaf.checked,
                    "skipped": [list(s) for s in leaf.skipped],
                    "max_rel_error": leaf.max_rel_error,
                    "passed": leaf.passed,
                }
                for leaf in self.leaves
            ],
        }


def gradcheck(graph: Graph, root: Node | int, step: float = 1e-5, tol: float = 1e-4,
              leaves: Sequence[int] | None = None) -> GradcheckReport:
    """Compare backward gradients with central differences, coordinate by coordinate.

    A coordinate is skipped when either perturbed evaluation moves the input of
    a relu or hinge node across (or off) its kink, since the one-sided slopes
    differ there.  Leaf values are restored before returning.
    """
    if step <= 0 or tol <= 0:
        raise ValueError("step and tol must be positive")
    graph.forward(root)
    grads = graph.backward(root)
    base_sig = graph._kink_signature()
    ids = list(graph.leaves if leaves is None else leaves)
    checks = []
    for lid in ids:
        node = graph.nodes[lid]
        x0 = node.value
        flat = x0.numpy().reshape(-1)
        analytic = grads[lid].data
        worst = 0.0
        skipped = []
        checked = 0
        for j in range(flat.size):
            vals = []
            kinked = False
            for sgn in (1.0, -1.0):
                xp = flat.copy()
                xp[j] += sgn * step
                graph.set_value(lid, Tensor(xp, x0.shape))
                vals.append(graph.forward(root))
                sig = graph._kink_signature()
                if any(not np.array_equal(s, b) for s, b in zip(sig, base_sig)):
                    kinked = True
            if kinked:
                skipped.append(tuple(int(i) for i in np.unravel_index(j, x0.shape)))
                continue
            fd = (vals[0] - vals[1]) / (2 * step)
            worst = max(worst, float(rel_error(analytic[j], fd)))
            checked += 1
        graph.set_value(lid, x0)
        checks.append(LeafCheck(lid, node.name, checked, skipped, worst, worst < tol))
    graph.forward(root)
    graph.backward(root)
    return GradcheckReport(step, tol, checks)
