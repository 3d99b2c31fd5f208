"""Dense float64 tensors on a recorded computation graph with reverse-mode gradients.

A Graph is built once through a GraphBuilder (declare inputs, parameters and
ops, mark outputs) and then evaluated any number of times with fresh input
bindings.  Everything is CPU numpy, float64, row-major.  Parameters live in a
ParamStore that several graphs may share (e.g. a training graph and a
single-step rollout graph of the same network).

Determinism contract: evaluating the same graph with the same bindings and the
same parameter values yields bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

Shape = tuple[int, ...]


class TensorcoreError(Exception):
    """Base class for graph construction/evaluation errors."""


class ShapeMismatch(TensorcoreError):
    def __init__(self, node: str, expected, actual):
        super().__init__(f"shape mismatch at {node}: expected {expected}, got {actual}")
        self.node = node
        self.expected = expected
        self.actual = actual


class NonFiniteValue(TensorcoreError):
    def __init__(self, node: str):
        super().__init__(f"non-finite value produced at node {node}")
        self.node = node


def as_tensor(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 array (the Tensor type of this core).

    Scalars stay 0-d (np.ascontiguousarray would promote them to shape (1,)).
    """
    a = np.asarray(x, dtype=np.float64)
    if a.ndim and not a.flags.c_contiguous:
        a = np.ascontiguousarray(a)
    return a


def _broadcast_shape(a: Shape, b: Shape, node: str) -> Shape:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeMismatch(node, a, b) from None


def _unbroadcast(grad: np.ndarray, shape: Shape) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    # sum out prepended axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # sum axes that were broadcast from extent 1
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class ParamStore:
    """Insertion-ordered mapping of parameter name -> float64 array.

    Arrays are treated as immutable values; an update replaces the entry.
    """

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self._values:
            raise TensorcoreError(f"parameter {name!r} already registered")
        arr = as_tensor(value)
        self._values[name] = arr
        return arr

    def replace(self, name: str, value) -> None:
        old = self._values[name]
        arr = as_tensor(value)
        if arr.shape != old.shape:
            raise ShapeMismatch(f"param {name}", old.shape, arr.shape)
        self._values[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def names(self) -> list[str]:
        return list(self._values)

    def items(self):
        return self._values.items()

    def total_size(self) -> int:
        return sum(v.size for v in self._values.values())


@dataclass(frozen=True)
class Node:
    idx: int
    op: str
    inputs: tuple[int, ...]
    shape: Shape
    name: str | None = None
    attrs: dict = field(default_factory=dict)

    def label(self) -> str:
        return self.name if self.name else f"{self.op}#{self.idx}"


@dataclass(frozen=True)
class Ref:
    """Handle to a node inside a GraphBuilder; supports arithmetic sugar."""

    builder: "GraphBuilder"
    idx: int
    shape: Shape

    def __add__(self, other):
        return self.builder.add(self, self.builder._coerce(other))

    def __sub__(self, other):
        return self.builder.sub(self, self.builder._coerce(other))

    def __mul__(self, other):
        return self.builder.mul(self, self.builder._coerce(other))

    def __truediv__(self, other):
        return self.builder.div(self, self.builder._coerce(other))

    def __rsub__(self, other):
        return self.builder.sub(self.builder._coerce(other), self)

    def __rmul__(self, other):
        return self.builder.mul(self, self.builder._coerce(other))

    def __radd__(self, other):
        return self.builder.add(self, self.builder._coerce(other))

    def __neg__(self):
        return self.builder.mul(self, self.builder._coerce(-1.0))

    def __matmul__(self, other):
        return self.builder.matmul(self, other)


class Graph:
    """Frozen op list in topological (construction) order plus shared parameters."""

    def __init__(self, nodes, store, input_names, output_names, consts):
        self.nodes: list[Node] = nodes
        self.store: ParamStore = store
        self.inputs: dict[str, int] = input_names      # name -> node idx
        self.outputs: dict[str, int] = output_names    # name -> node idx
        self._consts: dict[int, np.ndarray] = consts   # node idx -> value
        self._needs_grad: list[bool] | None = None

    @property
    def parameter_names(self) -> list[str]:
        return [n.name for n in self.nodes if n.op == "param"]

    def needs_grad(self) -> list[bool]:
        """Whether each node lies on a path from some parameter."""
        if self._needs_grad is None:
            needs = [False] * len(self.nodes)
            for node in self.nodes:
                needs[node.idx] = node.op == "param" or any(needs[i] for i in node.inputs)
            self._needs_grad = needs
        return self._needs_grad


class GraphBuilder:
    def __init__(self, store: ParamStore | None = None):
        self.store = store if store is not None else ParamStore()
        self._nodes: list[Node] = []
        self._inputs: dict[str, int] = {}
        self._outputs: dict[str, int] = {}
        self._consts: dict[int, np.ndarray] = {}
        self._param_refs: dict[str, Ref] = {}

    # -- node creation ------------------------------------------------------

    def _emit(self, op, inputs, shape, name=None, **attrs) -> Ref:
        idx = len(self._nodes)
        self._nodes.append(Node(idx, op, tuple(i.idx for i in inputs), tuple(shape), name, attrs))
        return Ref(self, idx, tuple(shape))

    def _coerce(self, x) -> Ref:
        if isinstance(x, Ref):
            return x
        return self.const(x)

    def input(self, name: str, shape) -> Ref:
        if name in self._inputs:
            raise TensorcoreError(f"duplicate input {name!r}")
        ref = self._emit("input", (), tuple(shape), name=name)
        self._inputs[name] = ref.idx
        return ref

    def param(self, name: str, init=None) -> Ref:
        if name not in self.store:
            if init is None:
                raise TensorcoreError(f"parameter {name!r} has no stored value and no init")
            self.store.add(name, init)
        cached = self._param_refs.get(name)
        if cached is not None:
            return cached
        ref = self._emit("param", (), self.store[name].shape, name=name)
        self._param_refs[name] = ref
        return ref

    def const(self, value) -> Ref:
        arr = as_tensor(value)
        ref = self._emit("const", (), arr.shape)
        self._consts[ref.idx] = arr
        return ref

    def output(self, name: str, ref: Ref) -> None:
        if name in self._outputs:
            raise TensorcoreError(f"duplicate output {name!r}")
        self._outputs[name] = ref.idx

    def finish(self) -> Graph:
        return Graph(self._nodes, self.store, dict(self._inputs), dict(self._outputs), dict(self._consts))

    # -- primitive ops ------------------------------------------------------

    def matmul(self, a: Ref, b: Ref) -> Ref:
        if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"matmul#{len(self._nodes)}", a.shape, b.shape)
        return self._emit("matmul", (a, b), (a.shape[0], b.shape[1]))

    def add(self, a: Ref, b: Ref) -> Ref:
        return self._emit("add", (a, b), _broadcast_shape(a.shape, b.shape, f"add#{len(self._nodes)}"))

    def sub(self, a: Ref, b: Ref) -> Ref:
        return self._emit("sub", (a, b), _broadcast_shape(a.shape, b.shape, f"sub#{len(self._nodes)}"))

    def mul(self, a: Ref, b: Ref) -> Ref:
        return self._emit("mul", (a, b), _broadcast_shape(a.shape, b.shape, f"mul#{len(self._nodes)}"))

    def div(self, a: Ref, b: Ref) -> Ref:
        return self._emit("div", (a, b), _broadcast_shape(a.shape, b.shape, f"div#{len(self._nodes)}"))

    def tanh(self, x: Ref) -> Ref:
        return self._emit("tanh", (x,), x.shape)

    def relu(self, x: Ref) -> Ref:
        return self._emit("relu", (x,), x.shape)

    def sigmoid(self, x: Ref) -> Ref:
        return self._emit("sigmoid", (x,), x.shape)

    def softplus(self, x: Ref) -> Ref:
        return self._emit("softplus", (x,), x.shape)

    def exp(self, x: Ref) -> Ref:
        return self._emit("exp", (x,), x.shape)

    def log(self, x: Ref) -> Ref:
        return self._emit("log", (x,), x.shape)

    def logsumexp(self, x: Ref, axis: int, keepdims: bool = True) -> Ref:
        shape = list(x.shape)
        if keepdims:
            shape[axis] = 1
        else:
            del shape[axis]
        return self._emit("logsumexp", (x,), tuple(shape), axis=axis, keepdims=keepdims)

    def _reduce_shape(self, x: Ref, axis, keepdims) -> Shape:
        if axis is None:
            return tuple(1 for _ in x.shape) if keepdims else ()
        shape = list(x.shape)
        if keepdims:
            shape[axis] = 1
        else:
            del shape[axis]
        return tuple(shape)

    def sum(self, x: Ref, axis: int | None = None, keepdims: bool = False) -> Ref:
        return self._emit("sum", (x,), self._reduce_shape(x, axis, keepdims), axis=axis, keepdims=keepdims)

    def mean(self, x: Ref, axis: int | None = None, keepdims: bool = False) -> Ref:
        return self._emit("mean", (x,), self._reduce_shape(x, axis, keepdims), axis=axis, keepdims=keepdims)

    def slice(self, x: Ref, axis: int, start: int, stop: int) -> Ref:
        if not (0 <= start < stop <= x.shape[axis]):
            raise ShapeMismatch(f"slice#{len(self._nodes)}", f"0<=start<stop<={x.shape[axis]}", (start, stop))
        shape = list(x.shape)
        shape[axis] = stop - start
        return self._emit("slice", (x,), tuple(shape), axis=axis, start=start, stop=stop)

    def concat(self, parts: list[Ref], axis: int) -> Ref:
        base = list(parts[0].shape)
        total = 0
        for p in parts:
            s = list(p.shape)
            s[axis] = base[axis]
            if s != base:
                raise ShapeMismatch(f"concat#{len(self._nodes)}", tuple(base), p.shape)
            total += p.shape[axis]
        base[axis] = total
        return self._emit("concat", tuple(parts), tuple(base), axis=axis,
                          splits=tuple(p.shape[axis] for p in parts))

    def broadcast_to(self, x: Ref, shape) -> Ref:
        _broadcast_shape(x.shape, tuple(shape), f"broadcast#{len(self._nodes)}")
        return self._emit("broadcast", (x,), tuple(shape))

    def reshape(self, x: Ref, shape) -> Ref:
        shape = tuple(shape)
        if math.prod(shape) != math.prod(x.shape):
            raise ShapeMismatch(f"reshape#{len(self._nodes)}", x.shape, shape)
        return self._emit("reshape", (x,), shape)


# -- forward kernels ---------------------------------------------------------

def _forward(node: Node, args: list[np.ndarray]) -> np.ndarray:
    op = node.op
    if op == "matmul":
        return args[0] @ args[1]
    if op == "add":
        return args[0] + args[1]
    if op == "sub":
        return args[0] - args[1]
    if op == "mul":
        return args[0] * args[1]
    if op == "div":
        return args[0] / args[1]
    if op == "tanh":
        return np.tanh(args[0])
    if op == "relu":
        return np.maximum(args[0], 0.0)
    if op == "sigmoid":
        # split by sign for stability at large |x|
        x = args[0]
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    if op == "softplus":
        x = args[0]
        return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    if op == "exp":
        return np.exp(args[0])
    if op == "log":
        return np.log(args[0])
    if op == "logsumexp":
        x = args[0]
        m = np.max(x, axis=node.attrs["axis"], keepdims=True)
        out = m + np.log(np.sum(np.exp(x - m), axis=node.attrs["axis"], keepdims=True))
        if not node.attrs["keepdims"]:
            out = np.squeeze(out, axis=node.attrs["axis"])
        return out
    if op == "sum":
        return np.sum(args[0], axis=node.attrs["axis"], keepdims=node.attrs["keepdims"])
    if op == "mean":
        return np.mean(args[0], axis=node.attrs["axis"], keepdims=node.attrs["keepdims"])
    if op == "slice":
        sl = [np.s_[:]] * args[0].ndim
        sl[node.attrs["axis"]] = np.s_[node.attrs["start"]:node.attrs["stop"]]
        return args[0][tuple(sl)]
    if op == "concat":
        return np.concatenate(args, axis=node.attrs["axis"])
    if op == "broadcast":
        return np.broadcast_to(args[0], node.shape)
    if op == "reshape":
        return args[0].reshape(node.shape)
    raise TensorcoreError(f"unknown op {op!r}")


def _backward(node: Node, args: list[np.ndarray], out: np.ndarray, g: np.ndarray):
    """Yield (input_position, gradient_contribution).

    matmul and slice are handled directly inside `gradient` (operand skipping
    and in-place scatter respectively).
    """
    op = node.op
    if op == "add":
        yield 0, _unbroadcast(g, args[0].shape)
        yield 1, _unbroadcast(g, args[1].shape)
    elif op == "sub":
        yield 0, _unbroadcast(g, args[0].shape)
        yield 1, _unbroadcast(-g, args[1].shape)
    elif op == "mul":
        yield 0, _unbroadcast(g * args[1], args[0].shape)
        yield 1, _unbroadcast(g * args[0], args[1].shape)
    elif op == "div":
        yield 0, _unbroadcast(g / args[1], args[0].shape)
        yield 1, _unbroadcast(-g * args[0] / (args[1] * args[1]), args[1].shape)
    elif op == "tanh":
        yield 0, g * (1.0 - out * out)
    elif op == "relu":
        yield 0, g * (args[0] > 0)
    elif op == "sigmoid":
        yield 0, g * out * (1.0 - out)
    elif op == "softplus":
        x = args[0]
        sig = np.empty_like(x)
        pos = x >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        sig[~pos] = ex / (1.0 + ex)
        yield 0, g * sig
    elif op == "exp":
        yield 0, g * out
    elif op == "log":
        yield 0, g / args[0]
    elif op == "logsumexp":
        axis = node.attrs["axis"]
        y = out if node.attrs["keepdims"] else np.expand_dims(out, axis)
        gg = g if node.attrs["keepdims"] else np.expand_dims(g, axis)
        yield 0, gg * np.exp(args[0] - y)
    elif op == "sum":
        yield 0, _spread(g, args[0].shape, node.attrs["axis"], node.attrs["keepdims"], scale=None)
    elif op == "mean":
        axis = node.attrs["axis"]
        n = args[0].size if axis is None else args[0].shape[axis]
        yield 0, _spread(g, args[0].shape, axis, node.attrs["keepdims"], scale=1.0 / n)
    elif op == "concat":
        axis = node.attrs["axis"]
        off = 0
        for pos, width in enumerate(node.attrs["splits"]):
            sl = [np.s_[:]] * g.ndim
            sl[axis] = np.s_[off:off + width]
            yield pos, g[tuple(sl)]
            off += width
    elif op == "broadcast":
        yield 0, _unbroadcast(g, args[0].shape)
    elif op == "reshape":
        yield 0, g.reshape(args[0].shape)
    else:
        raise TensorcoreError(f"no gradient for op {op!r}")


def _spread(g, shape, axis, keepdims, scale):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    out = np.broadcast_to(g, shape)
    if scale is not None:
        out = out * scale
    return np.ascontiguousarray(out) if scale is None else out


# -- execution ---------------------------------------------------------------

def _run_forward(graph: Graph, bindings: dict[str, np.ndarray], check_finite: bool):
    vals: list[np.ndarray | None] = [None] * len(graph.nodes)
    for name, idx in graph.inputs.items():
        if name not in bindings:
            raise TensorcoreError(f"missing binding for input {name!r}")
        arr = as_tensor(bindings[name])
        if arr.shape != graph.nodes[idx].shape:
            raise ShapeMismatch(f"input {name}", graph.nodes[idx].shape, arr.shape)
        vals[idx] = arr
    for node in graph.nodes:
        if node.op == "input":
            continue
        if node.op == "param":
            vals[node.idx] = graph.store[node.name]
            continue
        if node.op == "const":
            vals[node.idx] = graph._consts[node.idx]
            continue
        args = [vals[i] for i in node.inputs]
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            out = _forward(node, args)
        if check_finite and not np.all(np.isfinite(out)):
            raise NonFiniteValue(node.label())
        vals[node.idx] = out
    return vals


def evaluate(graph: Graph, bindings: dict[str, np.ndarray], *, check_finite: bool = True) -> dict[str, np.ndarray]:
    """Forward pass; returns the named outputs."""
    vals = _run_forward(graph, bindings, check_finite)
    return {name: vals[idx] for name, idx in graph.outputs.items()}

def gradient(graph: Graph, bindings: dict[str, np.ndarray], loss: str = "loss", *,
             check_finite: bool = True) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Reverse-mode gradients of the scalar output `loss` w.r.t. every parameter.

    Returns (grads, outputs) where grads maps parameter name -> gradient array
    of the parameter's shape.
    """
    if loss not in graph.outputs:
        raise TensorcoreError(f"no output named {loss!r}")
    loss_idx = graph.outputs[loss]
    if math.prod(graph.nodes[loss_idx].shape) != 1:
        raise TensorcoreError(f"loss node {loss!r} is not scalar: shape {graph.nodes[loss_idx].shape}")

    vals = _run_forward(graph, bindings, check_finite)
    n = len(graph.nodes)
    adj: list[np.ndarray | None] = [None] * n
    owned = [False] * n    # whether adj[i] is a private buffer safe for +=
    adj[loss_idx] = np.ones(graph.nodes[loss_idx].shape)
    owned[loss_idx] = True

    def accumulate(tgt: int, contrib: np.ndarray):
        if adj[tgt] is None:
            # alias freshly built arrays; copy lazily if += is ever needed
            adj[tgt] = contrib
            owned[tgt] = False
        else:
            if not owned[tgt]:
                adj[tgt] = adj[tgt].copy()
                owned[tgt] = True
            adj[tgt] += contrib

    needs = graph.needs_grad()
    for node in reversed(graph.nodes):
        g = adj[node.idx]
        if g is None or not needs[node.idx] or node.op in ("input", "param", "const"):
            continue
        args = [vals[i] for i in node.inputs]
        if node.op == "matmul":
            # skip the operand that no parameter feeds (e.g. raw observations)
            a_idx, b_idx = node.inputs
            if needs[a_idx]:
                accumulate(a_idx, g @ args[1].T)
            if needs[b_idx]:
                accumulate(b_idx, args[0].T @ g)
            continue
        if node.op == "slice":
            # add straight into the adjoint buffer instead of building a
            # full-size sparse contribution
            tgt = node.inputs[0]
            if adj[tgt] is None or not owned[tgt]:
                buf = np.zeros(args[0].shape)
                if adj[tgt] is not None:
                    buf += adj[tgt]
                adj[tgt] = buf
                owned[tgt] = True
            sl = [np.s_[:]] * args[0].ndim
            sl[node.attrs["axis"]] = np.s_[node.attrs["start"]:node.attrs["stop"]]
            adj[tgt][tuple(sl)] += g
            continue
        for pos, contrib in _backward(node, args, vals[node.idx], g):
            accumulate(node.inputs[pos], contrib)

    grads: dict[str, np.ndarray] = {}
    for node in graph.nodes:
        if node.op == "param":
            g = adj[node.idx]
            if g is None:
                g = np.zeros(node.shape)
            # a parameter may appear as several nodes; contributions add
            grads[node.name] = grads[node.name] + g if node.name in grads else g
    outputs = {name: vals[idx] for name, idx in graph.outputs.items()}
    return grads, outputs


# -- initializers -------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
