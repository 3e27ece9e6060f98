"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Values are eagerly computed at node construction, so a graph node always
carries its forward value; ``backward`` walks the graph once and accumulates
gradients additively over fan-out.  Complex quantities never enter the graph:
they travel as (real, imag) node pairs and complex products are expanded into
four real matmuls (``complex_matmul``).

Everything is 64-bit; there is no mixed precision and no in-graph mutation.
Leaf parameters live in a :class:`ParameterStore`, whose node objects persist
across training steps (graphs are rebuilt per step around the same leaves).
"""

from __future__ import annotations

import numpy as np

# Finiteness of every intermediate is part of the forward contract.  The check
# is cheap at the problem sizes this package targets; keep it on.
CHECK_FINITE = True

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class DiffcoreError(Exception):
    pass


class ShapeMismatch(DiffcoreError):
    pass


class NonFiniteValue(DiffcoreError):
    pass


class Node:
    """One node of the computation graph.

    ``value`` is the cached forward result (float64 ndarray), ``parents`` the
    input nodes, ``vjp`` a function mapping the output gradient to a tuple of
    parent gradients.  ``grad`` is filled by :func:`backward`.
    """

    __slots__ = ("value", "parents", "vjp", "grad", "tag")

    def __init__(self, value, parents=(), vjp=None, tag="leaf"):
        value = np.asarray(value, dtype=np.float64)
        if CHECK_FINITE and not np.isfinite(value).all():
            raise NonFiniteValue(f"non-finite value produced by op '{tag}'")
        self.value = value
        self.parents = tuple(parents)
        self.vjp = vjp
        self.grad = None
        self.tag = tag

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"<Node {self.tag} shape={self.value.shape}>"

    def __add__(self, other):
        return add(self, as_node(other))

    def __sub__(self, other):
        return sub(self, as_node(other))

    def __mul__(self, other):
        return mul(self, as_node(other))


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def constant(value, tag="const") -> Node:
    """Non-trainable leaf; never receives a gradient entry of its own."""
    return Node(value, tag=tag)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after a broadcast forward op."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise primitives (numpy broadcasting allowed)
# ---------------------------------------------------------------------------

def add(a: Node, b: Node) -> Node:
    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Node(a.value + b.value, (a, b), vjp, "add")


def sub(a: Node, b: Node) -> Node:
    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

    return Node(a.value - b.value, (a, b), vjp, "sub")


def mul(a: Node, b: Node) -> Node:
    def vjp(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return Node(a.value * b.value, (a, b), vjp, "mul")


def div(a: Node, b: Node) -> Node:
    def vjp(g):
        return (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        )

    return Node(a.value / b.value, (a, b), vjp, "div")


def neg(a: Node) -> Node:
    return Node(-a.value, (a,), lambda g: (-g,), "neg")


def scale(a: Node, s: float) -> Node:
    """Multiply by a python scalar constant."""
    s = float(s)
    return Node(a.value * s, (a,), lambda g: (g * s,), "scale")


def add_const(a: Node, c: float) -> Node:
    return Node(a.value + float(c), (a,), lambda g: (g,), "add_const")


def softplus(a: Node) -> Node:
    # log(1 + e^x), computed overflow-safe
    out = np.logaddexp(0.0, a.value)

    def vjp(g):
        return (g / (1.0 + np.exp(-a.value)),)

    return Node(out, (a,), vjp, "softplus")


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return Node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Node) -> Node:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.value)
    return Node(out, (a,), lambda g: (g / a.value,), "log")


def sqrt(a: Node) -> Node:
    out = np.sqrt(a.value)
    return Node(out, (a,), lambda g: (g / (2.0 * out),), "sqrt")


# ---------------------------------------------------------------------------
# structural / reduction primitives
# ---------------------------------------------------------------------------

def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # contiguous operands pin down one BLAS path, keeping results bit-stable
    # across graph and plain-numpy evaluations of the same product
    return np.matmul(np.ascontiguousarray(a), np.ascontiguousarray(b))


def matmul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeMismatch(f"matmul: incompatible shapes {av.shape} x {bv.shape}")

    def vjp(g):
        return _mm(g, bv.T), _mm(av.T, g)

    return Node(_mm(av, bv), (a, b), vjp, "matmul")


def transpose(a: Node) -> Node:
    if a.value.ndim != 2:
        raise ShapeMismatch(f"transpose: expected 2-d, got {a.value.shape}")
    return Node(a.value.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a: Node, shape) -> Node:
    orig = a.value.shape
    return Node(a.value.reshape(shape), (a,), lambda g: (g.reshape(orig),), "reshape")


def narrow(a: Node, axis: int, start: int, size: int) -> Node:
    """Contiguous slice along one axis; gradient zero-pads back."""
    index = [slice(None)] * a.value.ndim
    index[axis] = slice(start, start + size)
    index = tuple(index)

    def vjp(g):
        full = np.zeros_like(a.value)
        full[index] = g
        return (full,)

    return Node(a.value[index], (a,), vjp, "narrow")


def concat(nodes, axis=0) -> Node:
    nodes = list(nodes)
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return Node(np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes), vjp, "concat")


def node_sum(a: Node, axis=None, keepdims=False) -> Node:
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return Node(out, (a,), vjp, "sum")


def node_mean(a: Node, axis=None, keepdims=False) -> Node:
    if axis is None:
        count = a.value.size
    else:
        count = a.value.shape[axis]
    return scale(node_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def norm(a: Node) -> Node:
    """Euclidean norm over all entries; gradient is x / ||x||."""
    out = np.sqrt((a.value * a.value).sum())

    def vjp(g):
        return (g * a.value / out,)

    return Node(out, (a,), vjp, "norm")


def stop_gradient(a: Node) -> Node:
    """sg(.): forward identity, gradient exactly zero (implemented as a fresh leaf)."""
    return Node(a.value, (), None, "stop_gradient")


def rows_lookup(table: Node, indices: np.ndarray) -> Node:
    """Gather rows ``table[indices]`` with scatter-add gradient into the table.

    ``indices`` has shape (batch, k); the result is (batch, k, row_dim)
    flattened to (batch, k*row_dim).
    """
    idx = np.asarray(indices, dtype=np.int64)
    b, k = idx.shape
    d = table.value.shape[1]
    out = table.value[idx].reshape(b, k * d)

    def vjp(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, idx.reshape(-1), g.reshape(b * k, d))
        return (gt,)

    return Node(out, (table,), vjp, "rows_lookup")


def custom(value, parents, vjp, tag) -> Node:
    """Escape hatch for hand-derived gradients (Gaussian NLL, quantizer)."""
    return Node(value, parents, vjp, tag)


# ---------------------------------------------------------------------------
# complex arithmetic carried as (re, im) node pairs
# ---------------------------------------------------------------------------

def complex_matmul(a_re: Node, a_im: Node, b_re: Node, b_im: Node):
    """(A @ B) for complex matrices as real pairs: four real matmuls."""
    re = sub(matmul(a_re, b_re), matmul(a_im, b_im))
    im = add(matmul(a_re, b_im), matmul(a_im, b_re))
    return re, im


def complex_apply(a_re, a_im, b_re, b_im):
    """Numpy mirror of :func:`complex_matmul` with identical operation order,
    so graph and plain evaluations agree bitwise."""
    return _mm(a_re, b_re) - _mm(a_im, b_im), _mm(a_re, b_im) + _mm(a_im, b_re)


# ---------------------------------------------------------------------------
# graph execution
# ---------------------------------------------------------------------------

def forward(root: Node) -> np.ndarray:
    """Values are computed eagerly, so this just returns the cached root value."""
    return root.value


def topo_order(root: Node):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every reachable node.

    The root must be scalar-valued.  Gradients of previous backward passes on
    reachable nodes are overwritten, not accumulated across calls.
    """
    if root.value.size != 1:
        raise ShapeMismatch(f"backward: root must be scalar, got shape {root.value.shape}")
    order = topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        gs = node.vjp(node.grad)
        for parent, g in zip(node.parents, gs):
            if g is None:
                continue
            if g.shape != parent.value.shape:
                raise ShapeMismatch(
                    f"backward of '{node.tag}': gradient shape {g.shape} "
                    f"!= value shape {parent.value.shape}"
                )
            parent.grad = g if parent.grad is None else parent.grad + g


# ---------------------------------------------------------------------------
# parameters and the optimizer
# ---------------------------------------------------------------------------

class ParameterStore:
    """Named trainable leaves plus per-parameter Adam state.

    Leaf node objects are stable across steps: ``set_value`` mutates the
    array in place so freshly built graphs keep referencing the same leaves.
    """

    def __init__(self):
        self._params: dict[str, Node] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def register(self, name: str, value) -> Node:
        if name in self._params:
            raise DiffcoreError(f"parameter '{name}' already registered")
        node = Node(np.array(value, dtype=np.float64), tag=f"param:{name}")
        self._params[name] = node
        self._m[name] = np.zeros_like(node.value)
        self._v[name] = np.zeros_like(node.value)
        self._t[name] = 0
        return node

    def __getitem__(self, name: str) -> Node:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def set_value(self, name: str, value: np.ndarray) -> None:
        node = self._params[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != node.value.shape:
            raise ShapeMismatch(
                f"set_value('{name}'): shape {value.shape} != {node.value.shape}"
            )
        node.value[...] = value

    def values(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self._params.items()}

    def step_count(self, name: str) -> int:
        return self._t[name]

    def gradients(self) -> dict[str, np.ndarray]:
        """Gradients accumulated by the last backward pass; parameters that the
        graph never touched are absent from the map."""
        return {k: n.grad for k, n in self._params.items() if n.grad is not None}

    def zero_grads(self) -> None:
        for n in self._params.values():
            n.grad = None


def adam_step(store: ParameterStore, grads: dict[str, np.ndarray], lr: float) -> None:
    """Adaptive-moment update (0.9 / 0.999, eps 1e-8) for every named gradient."""
    for name, g in grads.items():
        if name not in store:
            raise DiffcoreError(f"adam_step: unknown parameter '{name}'")
        node = store[name]
        g = np.asarray(g, dtype=np.float64)
        if g.shape != node.value.shape:
            raise ShapeMismatch(
                f"adam_step('{name}'): gradient shape {g.shape} != {node.value.shape}"
            )
        store._t[name] += 1
        t = store._t[name]
        m = store._m[name]
        v = store._v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1 ** t)
        v_hat = v / (1.0 - ADAM_BETA2 ** t)
        node.value -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Joint global-norm clipping over all entries of the gradient map."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    factor = max_norm / total
    return {k: g * factor for k, g in grads.items()}
