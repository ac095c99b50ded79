"""Minimal reverse-mode autodiff over dense float64 arrays.

A :class:`Tape` records a define-by-run graph of numpy operations. The op set
is just large enough for MLP evaluation, unrolled rollouts, Gaussian potential
costs, and LogSumExp aggregation; :func:`backward` walks the node list in
reverse insertion order exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TapeError(ValueError):
    pass


class Node:
    """One recorded operation: cached output value plus a backward closure."""

    __slots__ = ("tape", "idx", "value", "parents", "_vjps", "grad")

    def __init__(self, tape, value, parents, vjps):
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise TapeError("non-finite value produced on tape")
        self.tape = tape
        self.value = value
        self.parents = parents
        self._vjps = vjps
        self.grad = None
        self.idx = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    # arithmetic sugar; constants are lifted to leaves on the same tape
    def __add__(self, other):
        return add(self, self.tape.lift(other))

    def __sub__(self, other):
        return sub(self, self.tape.lift(other))

    def __mul__(self, other):
        return mul(self, self.tape.lift(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, self.tape.lift(other))


class Tape:
    """Append-only operation record; single-threaded by contract."""

    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, value) -> Node:
        return Node(self, value, (), ())

    def lift(self, value) -> Node:
        if isinstance(value, Node):
            if value.tape is not self:
                raise TapeError("node belongs to a different tape")
            return value
        return self.leaf(value)


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def _binary_shapes_ok(a, b):
    try:
        np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError as exc:
        raise TapeError(f"shape mismatch: {a.value.shape} vs {b.value.shape}") from exc


def add(a: Node, b: Node) -> Node:
    _binary_shapes_ok(a, b)
    return Node(
        a.tape,
        a.value + b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: _unbroadcast(g, b.value.shape)),
    )


def sub(a: Node, b: Node) -> Node:
    _binary_shapes_ok(a, b)
    return Node(
        a.tape,
        a.value - b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: _unbroadcast(-g, b.value.shape)),
    )


def mul(a: Node, b: Node) -> Node:
    _binary_shapes_ok(a, b)
    return Node(
        a.tape,
        a.value * b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.value, a.value.shape),
            lambda g: _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return Node(a.tape, a.value * c, (a,), (lambda g: g * c,))


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise TapeError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")
    return Node(
        a.tape,
        a.value @ b.value,
        (a, b),
        (lambda g: g @ b.value.T, lambda g: a.value.T @ g),
    )


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)
    return Node(a.tape, out, (a,), (lambda g: g * (1.0 - out * out),))


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return Node(a.tape, out, (a,), (lambda g: g * out,))


def sigmoid(a: Node) -> Node:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return Node(a.tape, out, (a,), (lambda g: g * out * (1.0 - out),))


def asum(a: Node, axis=None) -> Node:
    def vjp(g):
        if axis is None:
            return np.full_like(a.value, g)
        return np.broadcast_to(np.expand_dims(g, axis), a.value.shape).copy()

    return Node(a.tape, np.sum(a.value, axis=axis), (a,), (vjp,))


def squared_norm(a: Node) -> Node:
    return Node(a.tape, np.sum(a.value * a.value), (a,), (lambda g: g * 2.0 * a.value,))


def logsumexp(a: Node) -> Node:
    """LogSumExp over all entries, max-subtracted for overflow safety."""
    v = a.value.ravel()
    m = np.max(v)
    out = m + np.log(np.sum(np.exp(v - m)))
    soft = np.exp(a.value - out)  # softmax(a), reshaped like a
    return Node(a.tape, out, (a,), (lambda g: g * soft,))


def concat(parts: list[Node], axis: int = -1) -> Node:
    if not parts:
        raise TapeError("concat of zero nodes")
    tape = parts[0].tape
    values = [p.value for p in parts]
    out = np.concatenate(values, axis=axis)
    ax = axis % out.ndim
    sizes = [v.shape[ax] for v in values]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        sl = [slice(None)] * out.ndim
        sl[ax] = slice(offsets[i], offsets[i + 1])
        return lambda g: g[tuple(sl)]

    return Node(tape, out, tuple(parts), tuple(make_vjp(i) for i in range(len(parts))))


def repeat_rows(a: Node, n: int) -> Node:
    """Tile a (D,) vector into an (n, D) matrix; gradients sum over rows."""
    if a.value.ndim != 1:
        raise TapeError("repeat_rows expects a 1-d node")
    out = np.broadcast_to(a.value, (n, a.value.shape[0])).copy()
    return Node(a.tape, out, (a,), (lambda g: g.sum(axis=0),))


_OPS = {
    "add": add,
    "sub": sub,
    "scale": scale,
    "mul": mul,
    "affine": None,  # filled below (needs mlp-style affine)
    "tanh": tanh,
    "exp": exp,
    "sum": asum,
    "squared-norm": squared_norm,
    "logsumexp": logsumexp,
    "concat": concat,
}


def affine(x: Node, w: Node, b: Node) -> Node:
    """x @ w + b with b broadcast over rows."""
    return add(matmul(x, w), b)


_OPS["affine"] = affine


def record(tape: Tape, op_kind: str, *inputs):
    """Dispatch by op name; unknown kinds are a hard error."""
    fn = _OPS.get(op_kind)
    if fn is None:
        raise TapeError(f"unknown op-kind {op_kind!r}")
    if op_kind == "scale":
        return scale(tape.lift(inputs[0]), inputs[1])
    if op_kind == "concat":
        return concat([tape.lift(p) for p in inputs[0]], *inputs[1:])
    return fn(*(tape.lift(x) for x in inputs))


def backward(tape: Tape, root: Node) -> None:
    """Seed ``root`` with 1 and accumulate gradients into every node's ``.grad``."""
    if root.value.size != 1:
        raise TapeError("backward root must be scalar-valued")
    for node in tape.nodes:
        node.grad = np.zeros_like(node.value)
    root.grad = np.ones_like(root.value)
    for node in reversed(tape.nodes):
        g = node.grad
        if not np.any(g):
            continue
        for parent, vjp in zip(node.parents, node._vjps):
            parent.grad = parent.grad + vjp(g)


# ---------------------------------------------------------------------------
# MLP on the tape
# ---------------------------------------------------------------------------

ACTIVATIONS = {"tanh": tanh, "linear": lambda x: x}


@dataclass
class MlpParams:
    """Layer weights/biases; hidden layers tanh, final layer linear."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise TapeError("weights/biases length mismatch")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise TapeError("adjacent layer dims incompatible")
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise TapeError("bias dim incompatible with weight")

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def load_flat(self, vec: np.ndarray) -> None:
        i = 0
        for k in range(len(self.weights)):
            for arr in (self.weights[k], self.biases[k]):
                n = arr.size
                arr[...] = vec[i : i + n].reshape(arr.shape)
                i += n
        if i != vec.size:
            raise TapeError("flat parameter vector length mismatch")

    @classmethod
    def create(cls, dims: list[int], rng: np.random.Generator, init_scale: float = 1.0):
        weights, biases = [], []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            weights.append(rng.standard_normal((d_in, d_out)) * init_scale / np.sqrt(d_in))
            biases.append(np.zeros(d_out))
        return cls(weights, biases)


def mlp_eval(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Plain numpy forward pass (no tape); for inference-only bulk rollouts."""
    h = np.asarray(x, dtype=np.float64)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i != last:
            h = np.tanh(h)
    return h


def mlp_leaves(tape: Tape, params: MlpParams):
    """Record the parameters as leaves so gradients flow to them."""
    return [(tape.leaf(w), tape.leaf(b)) for w, b in zip(params.weights, params.biases)]


def mlp_forward(tape: Tape, params: MlpParams, x: Node, leaves=None) -> Node:
    """Evaluate the MLP on a (B, in_dim) node; final layer stays linear."""
    if x.value.ndim != 2 or x.value.shape[1] != params.in_dim:
        raise TapeError(f"input dim {x.value.shape} incompatible with first layer {params.in_dim}")
    if leaves is None:
        leaves = mlp_leaves(tape, params)
    act = ACTIVATIONS[params.activation]
    h = x
    last = len(leaves) - 1
    for i, (w, b) in enumerate(leaves):
        h = affine(h, w, b)
        if i != last:
            h = act(h)
    return h
