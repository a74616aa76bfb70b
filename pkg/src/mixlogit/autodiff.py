"""Minimal reverse-mode autodiff over dense float64 arrays.

Forward values are computed eagerly; each op registers a vector-Jacobian
closure per input. ``backward`` walks the graph once in reverse
topological order (iteratively, so deep chains are fine) and accumulates
adjoints additively across fan-out. A root can only be backwarded once.

Shapes are explicit: elementwise ops require identical shapes, except
that a scalar (shape ()) may combine with any tensor. There is no other
broadcasting.
"""

from __future__ import annotations

import numpy as np

from . import specfn


class GraphError(RuntimeError):
    pass


def _as_value(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    return arr


class Node:
    __slots__ = ("value", "adjoint", "parents", "requires_grad", "_backward_done")

    def __init__(self, value, requires_grad: bool = False, parents=None):
        self.value = _as_value(value)
        if not np.all(np.isfinite(self.value)):
            raise FloatingPointError("node created with non-finite value")
        self.adjoint = np.zeros_like(self.value)
        # parents: list of (input_node, vjp) where vjp maps the upstream
        # adjoint to this input's adjoint contribution
        self.parents = parents or []
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p, _ in self.parents
        )
        self._backward_done = False

    @property
    def shape(self):
        return self.value.shape

    def zero_adjoint(self) -> None:
        self.adjoint = np.zeros_like(self.value)

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # light operator sugar; the op functions below are the real API
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def constant(value) -> Node:
    return Node(value, requires_grad=False)


def parameter(value) -> Node:
    return Node(value, requires_grad=True)


def _coerce(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _check_elementwise(a: Node, b: Node, op: str) -> None:
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ValueError(
            f"{op}: incompatible shapes {a.shape} and {b.shape} "
            "(only scalar-tensor mixing is allowed)"
        )


def _result(value, parents) -> Node:
    out = _as_value(value)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite value produced by op")
    return Node(out, parents=parents)


def _reduce_to(shape, g: np.ndarray) -> np.ndarray:
    # upstream adjoint of a scalar operand that was combined with a tensor
    if shape == () and g.shape != ():
        return np.sum(g)
    return g


def add(a, b) -> Node:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise(a, b, "add")
    return _result(
        a.value + b.value,
        [(a, lambda g: _reduce_to(a.shape, g)), (b, lambda g: _reduce_to(b.shape, g))],
    )


def sub(a, b) -> Node:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise(a, b, "sub")
    return _result(
        a.value - b.value,
        [(a, lambda g: _reduce_to(a.shape, g)), (b, lambda g: _reduce_to(b.shape, -g))],
    )


def mul(a, b) -> Node:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise(a, b, "mul")
    av, bv = a.value, b.value
    return _result(
        av * bv,
        [
            (a, lambda g: _reduce_to(a.shape, g * bv)),
            (b, lambda g: _reduce_to(b.shape, g * av)),
        ],
    )


def scale(a, c: float) -> Node:
    a = _coerce(a)
    c = float(c)
    return _result(a.value * c, [(a, lambda g: g * c)])


def matmul(a: Node, b: Node) -> Node:
    a, b = _coerce(a), _coerce(b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ValueError(f"matmul: operands must be 1-D or 2-D, got {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {av.shape} @ {bv.shape}")

    def vjp_a(g):
        if av.ndim == 1 and bv.ndim == 2:  # (k,)@(k,n) -> (n,)
            return bv @ g
        if av.ndim == 2 and bv.ndim == 1:  # (m,k)@(k,) -> (m,)
            return np.outer(g, bv)
        if av.ndim == 1 and bv.ndim == 1:  # (k,)@(k,) -> ()
            return g * bv
        return g @ bv.T

    def vjp_b(g):
        if av.ndim == 1 and bv.ndim == 2:
            return np.outer(av, g)
        if av.ndim == 2 and bv.ndim == 1:
            return av.T @ g
        if av.ndim == 1 and bv.ndim == 1:
            return g * av
        return av.T @ g

    return _result(av @ bv, [(a, vjp_a), (b, vjp_b)])


def exp(a: Node) -> Node:
    a = _coerce(a)
    with np.errstate(over="ignore"):  # overflow surfaces as the inf check below
        ev = np.exp(a.value)
    return _result(ev, [(a, lambda g: g * ev)])


def log(a: Node) -> Node:
    a = _coerce(a)
    if np.any(a.value <= 0):
        raise ValueError("log: input must be strictly positive")
    av = a.value
    return _result(np.log(av), [(a, lambda g: g / av)])


def tanh(a: Node) -> Node:
    a = _coerce(a)
    tv = np.tanh(a.value)
    return _result(tv, [(a, lambda g: g * (1.0 - tv * tv))])


def sigmoid(a: Node) -> Node:
    a = _coerce(a)
    sv = np.asarray(specfn.sigmoid(a.value))
    return _result(sv, [(a, lambda g: g * sv * (1.0 - sv))])


def log_sigmoid(a: Node) -> Node:
    a = _coerce(a)
    av = a.value
    sv = np.asarray(specfn.sigmoid(-av))  # 1 - sigmoid(av)
    return _result(np.asarray(specfn.log_sigmoid(av)), [(a, lambda g: g * sv)])


def softplus(a: Node) -> Node:
    a = _coerce(a)
    av = a.value
    return _result(
        np.asarray(specfn.softplus(av)),
        [(a, lambda g: g * np.asarray(specfn.sigmoid(av)))],
    )


def gather_rows(table: Node, indices) -> Node:
    """Select rows of a 2-D table; duplicate indices accumulate in backward."""
    table = _coerce(table)
    if table.value.ndim != 2:
        raise ValueError(f"gather_rows: table must be 2-D, got shape {table.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError(f"gather_rows: indices must be 1-D, got shape {idx.shape}")
    if np.any(idx < 0) or np.any(idx >= table.value.shape[0]):
        raise ValueError("gather_rows: index out of range")

    def vjp(g):
        out = np.zeros_like(table.value)
        np.add.at(out, idx, g)
        return out

    return _result(table.value[idx], [(table, vjp)])


def window_mean(a: Node, width: int) -> Node:
    """Mean over consecutive groups of ``width`` rows: [m*w, d] -> [m, d]."""
    a = _coerce(a)
    av = a.value
    if av.ndim != 2:
        raise ValueError(f"window_mean: input must be 2-D, got shape {a.shape}")
    if width < 1 or av.shape[0] % width != 0:
        raise ValueError(
            f"window_mean: row count {av.shape[0]} not divisible by width {width}"
        )
    m = av.shape[0] // width
    out = av.reshape(m, width, av.shape[1]).mean(axis=1)

    def vjp(g):
        return np.repeat(g / width, width, axis=0)

    return _result(out, [(a, vjp)])


def take_per_row(a: Node, cols) -> Node:
    """Element [i, cols[i]] of each row of a 2-D node -> 1-D node."""
    a = _coerce(a)
    av = a.value
    if av.ndim != 2:
        raise ValueError(f"take_per_row: input must be 2-D, got shape {a.shape}")
    idx = np.asarray(cols, dtype=np.intp)
    if idx.shape != (av.shape[0],):
        raise ValueError(
            f"take_per_row: need one column per row, got {idx.shape} for {a.shape}"
        )
    if np.any(idx < 0) or np.any(idx >= av.shape[1]):
        raise ValueError("take_per_row: column index out of range")
    rows = np.arange(av.shape[0])

    def vjp(g):
        out = np.zeros_like(av)
        out[rows, idx] = g
        return out

    return _result(av[rows, idx], [(a, vjp)])


def take(a: Node, index: int) -> Node:
    """Scalar element of a 1-D node."""
    a = _coerce(a)
    if a.value.ndim != 1:
        raise ValueError(f"take: input must be 1-D, got shape {a.shape}")
    i = int(index)
    if not (0 <= i < a.value.shape[0]):
        raise ValueError(f"take: index {i} out of range for length {a.value.shape[0]}")

    def vjp(g):
        out = np.zeros_like(a.value)
        out[i] = g
        return out

    return _result(a.value[i], [(a, vjp)])


def sum_(a: Node, axis=None) -> Node:
    a = _coerce(a)
    av = a.value

    def vjp(g):
        if axis is None:
            return np.full_like(av, float(g))
        return np.broadcast_to(np.expand_dims(g, axis), av.shape).copy()

    return _result(np.sum(av, axis=axis), [(a, vjp)])


def mean(a: Node, axis=None) -> Node:
    a = _coerce(a)
    av = a.value
    count = av.size if axis is None else av.shape[axis]

    def vjp(g):
        if axis is None:
            return np.full_like(av, float(g) / count)
        return np.broadcast_to(np.expand_dims(g, axis), av.shape) / count

    return _result(np.mean(av, axis=axis), [(a, vjp)])


def log_softmax(a: Node, axis: int = -1) -> Node:
    a = _coerce(a)
    av = a.value
    shifted = av - np.max(av, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse

    def vjp(g):
        return g - np.exp(out) * np.sum(g, axis=axis, keepdims=True)

    return _result(out, [(a, vjp)])


def logsumexp(a: Node) -> Node:
    """Scalar log(sum(exp(a))) of a 1-D node, numerically stable."""
    a = _coerce(a)
    av = a.value
    m = float(np.max(av))
    ex = np.exp(av - m)
    total = float(np.sum(ex))
    weights = ex / total

    return _result(m + np.log(total), [(a, lambda g: g * weights)])


def custom_node(value, inputs, partials) -> Node:
    """Node with hand-supplied local derivatives.

    ``partials[i]`` is d(value)/d(inputs[i]); backward multiplies the
    upstream adjoint elementwise by each partial.
    """
    inputs = list(inputs)
    partials = [_as_value(p) for p in partials]
    if len(inputs) != len(partials):
        raise ValueError(
            f"custom_node: {len(inputs)} inputs but {len(partials)} partials"
        )
    parents = []
    for inp, part in zip(inputs, partials):
        if part.shape != inp.shape and part.shape != () and inp.shape != ():
            raise ValueError(
                f"custom_node: partial shape {part.shape} incompatible with "
                f"input shape {inp.shape}"
            )
        parents.append((inp, lambda g, p=part, s=inp.shape: _reduce_to(s, g * p)))
    return _result(value, parents)


def _toposort(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order  # parents before children


def backward(root: Node) -> None:
    """Populate adjoints with d(root)/d(node) for every reachable node
    that requires grad. Root must be scalar, and may be backwarded once."""
    if root.value.shape != ():
        raise ValueError(f"backward: root must be scalar, got shape {root.value.shape}")
    if root._backward_done:
        raise GraphError("backward already called on this root")
    root._backward_done = True
    root.adjoint = np.asarray(1.0)
    for node in reversed(_toposort(root)):
        if not node.requires_grad:
            continue
        g = node.adjoint
        for parent, vjp in node.parents:
            if parent.requires_grad:
                parent.adjoint = np.asarray(parent.adjoint + vjp(g))
