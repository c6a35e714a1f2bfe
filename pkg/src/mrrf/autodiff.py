"""Reverse-mode differentiation over a small, closed primitive set.

A :class:`Tape` records primitive applications in order. :meth:`Tape.backward`
walks the records in exact reverse order and accumulates adjoints into the
``grad`` of every :class:`Parameter` reached.

Primitives act on the trailing axes of their operands, so a leading batch axis
passes through unchanged:

``matvec(W, x, transpose=False)``
    ``y[..., a] = sum_b M[a, b] x[..., b]`` with ``M = W.reshape(W.shape[0], -1)``,
    or ``M = W.reshape(-1, W.shape[-1]).T`` when ``transpose``.
``kmode_product(t, m, k, transpose=False)``
    mode-``k`` product of ``t`` with ``m`` (or ``m.T``).
``outer_product(v_1, ..., v_M)``
    outer product over the last axis of 1-D or row-batched 2-D operands.
``tanh``, ``relu``, ``sigmoid``
    elementwise.
``concatenate(x_1, ..., x_n)`` / ``pad_one(x)``
    along the last axis.
``add(a, b)`` / ``hadamard(a, b)``
    elementwise with numpy broadcasting.
``flatten(t, batch_dims=0)``
    keeps the first ``batch_dims`` axes, row-major flattens the rest.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import tensor as T
from .errors import InvalidArgumentError, NumericError, ShapeError, UnsupportedOperationError

PRIMITIVES = frozenset(
    {
        "matvec",
        "kmode_product",
        "outer_product",
        "tanh",
        "relu",
        "sigmoid",
        "concatenate",
        "pad_one",
        "add",
        "hadamard",
        "flatten",
    }
)
CONTRACTIONS = frozenset({"matvec", "kmode_product", "outer_product"})

# primitives whose adjoint is deliberately sign-flipped; debug negative control only
_CORRUPTED: set[str] = set()


@contextlib.contextmanager
def corrupt_adjoint(kind):
    """Flip the sign of one primitive's adjoint inside the ``with`` block."""
    if kind not in PRIMITIVES:
        raise UnsupportedOperationError(f"unknown primitive {kind!r}")
    _CORRUPTED.add(kind)
    try:
        yield
    finally:
        _CORRUPTED.discard(kind)


class Parameter:
    """A named trainable tensor with a gradient buffer of the same shape."""

    def __init__(self, name, value):
        self.name = name
        self.value = T.as_tensor(value).copy()
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def zero_grads(params):
    for p in params:
        p.zero_grad()


class Node:
    __slots__ = ("value", "id", "param")

    def __init__(self, value, id, param=None):
        self.value = value
        self.id = id
        self.param = param

    @property
    def shape(self):
        return self.value.shape


@dataclass
class Record:
    kind: str
    inputs: tuple
    output: Node
    attrs: dict = field(default_factory=dict)
    saved: object = None


def _sum_to_shape(g, shape):
    """Reduce a broadcast adjoint back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(extra))) if extra > 0 else g
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _as_matrix(w, transpose):
    if transpose:
        return w.reshape(-1, w.shape[-1]).T
    return w.reshape(w.shape[0], -1)


def _fwd_matvec(vals, attrs):
    w, x = vals
    mat = _as_matrix(w, attrs.get("transpose", False))
    if x.shape[-1] != mat.shape[1]:
        raise ShapeError(f"matvec: weight {w.shape} does not accept input {x.shape}")
    return x @ mat.T, None


def _adj_matvec(g, vals, out, saved, attrs):
    w, x = vals
    transpose = attrs.get("transpose", False)
    mat = _as_matrix(w, transpose)
    gx = g @ mat
    gm = g.reshape(-1, g.shape[-1]).T @ x.reshape(-1, x.shape[-1])
    gw = gm.T.reshape(w.shape) if transpose else gm.reshape(w.shape)
    return [gw, gx]


def _norm_mode(k, ndim):
    k = k + ndim if k < 0 else k
    if not 0 <= k < ndim:
        raise InvalidArgumentError(f"mode {k} out of range for order-{ndim} tensor")
    return k


def _fwd_kmode(vals, attrs):
    t, m = vals
    k = _norm_mode(attrs["k"], t.ndim)
    mat = m.T if attrs.get("transpose", False) else m
    return T.kmode_product(t, mat, k), None


def _adj_kmode(g, vals, out, saved, attrs):
    t, m = vals
    k = _norm_mode(attrs["k"], t.ndim)
    transpose = attrs.get("transpose", False)
    mat = m.T if transpose else m
    gt = T.kmode_product(g, mat.T, k)
    gmat = T.unfold(g, k) @ T.unfold(t, k).T
    return [gt, gmat.T if transpose else gmat]


def _fwd_outer(vals, attrs):
    ndims = {v.ndim for v in vals}
    if len(ndims) != 1 or ndims.pop() not in (1, 2):
        raise ShapeError("outer_product operands must all be 1-D or all row-batched 2-D")
    if vals[0].ndim == 1:
        return T.outer_product(vals), None
    batch = vals[0].shape[0]
    if any(v.shape[0] != batch for v in vals):
        raise ShapeError(f"outer_product batch sizes differ: {[v.shape for v in vals]}")
    rows = [np.ascontiguousarray(v) for v in vals]
    flat = kernels.outer_rows(rows)
    return flat.reshape((batch,) + tuple(v.shape[1] for v in vals)), None


def _adj_outer(g, vals, out, saved, attrs):
    if vals[0].ndim == 1:
        rows = [v[None, :] for v in vals]
        grads = kernels.outer_rows_adjoint(g.reshape(1, -1), rows)
        return [gr[0] for gr in grads]
    rows = [np.ascontiguousarray(v) for v in vals]
    return kernels.outer_rows_adjoint(g.reshape(g.shape[0], -1), rows)


def _fwd_tanh(vals, attrs):
    y = np.tanh(vals[0])
    return y, y


def _adj_tanh(g, vals, out, saved, attrs):
    return [g * (1.0 - saved * saved)]


def _fwd_relu(vals, attrs):
    return np.maximum(vals[0], 0.0), None


def _adj_relu(g, vals, out, saved, attrs):
    return [g * (vals[0] > 0.0)]


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _fwd_sigmoid(vals, attrs):
    y = _sigmoid(vals[0])
    return y, y


def _adj_sigmoid(g, vals, out, saved, attrs):
    return [g * saved * (1.0 - saved)]


def _fwd_concat(vals, attrs):
    lead = {v.shape[:-1] for v in vals}
    if len(lead) != 1:
        raise ShapeError(f"concatenate: leading shapes differ {[v.shape for v in vals]}")
    return np.concatenate(vals, axis=-1), None


def _adj_concat(g, vals, out, saved, attrs):
    cuts = np.cumsum([v.shape[-1] for v in vals])[:-1]
    return list(np.split(g, cuts, axis=-1))


def _fwd_pad(vals, attrs):
    x = vals[0]
    if x.ndim == 0:
        x = x.reshape(1)
    ones = np.ones(x.shape[:-1] + (1,))
    return np.concatenate([ones, x], axis=-1), None


def _adj_pad(g, vals, out, saved, attrs):
    return [g[..., 1:].reshape(vals[0].shape)]


def _fwd_add(vals, attrs):
    a, b = vals
    try:
        return a + b, None
    except ValueError as exc:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc


def _adj_add(g, vals, out, saved, attrs):
    a, b = vals
    return [_sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape)]


def _fwd_hadamard(vals, attrs):
    a, b = vals
    try:
        return a * b, None
    except ValueError as exc:
        raise ShapeError(f"hadamard: shapes {a.shape} and {b.shape} do not broadcast") from exc


def _adj_hadamard(g, vals, out, saved, attrs):
    a, b = vals
    return [_sum_to_shape(g * b, a.shape), _sum_to_shape(g * a, b.shape)]


def _fwd_flatten(vals, attrs):
    t = vals[0]
    bd = attrs.get("batch_dims", 0)
    return t.reshape(t.shape[:bd] + (-1,)), None


def _adj_flatten(g, vals, out, saved, attrs):
    return [g.reshape(vals[0].shape)]


_RULES = {
    "matvec": (_fwd_matvec, _adj_matvec),
    "kmode_product": (_fwd_kmode, _adj_kmode),
    "outer_product": (_fwd_outer, _adj_outer),
    "tanh": (_fwd_tanh, _adj_tanh),
    "relu": (_fwd_relu, _adj_relu),
    "sigmoid": (_fwd_sigmoid, _adj_sigmoid),
    "concatenate": (_fwd_concat, _adj_concat),
    "pad_one": (_fwd_pad, _adj_pad),
    "add": (_fwd_add, _adj_add),
    "hadamard": (_fwd_hadamard, _adj_hadamard),
    "flatten": (_fwd_flatten, _adj_flatten),
}
_ARITY = {"matvec": 2, "kmode_product": 2, "add": 2, "hadamard": 2,
          "tanh": 1, "relu": 1, "sigmoid": 1, "pad_one": 1, "flatten": 1}


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self.records: list[Record] = []
        self._next_id = 0
        self._param_nodes: dict[int, Node] = {}

    def __len__(self):
        return len(self.records)

    def _node(self, value, param=None):
        node = Node(value, self._next_id, param)
        self._next_id += 1
        return node

    def constant(self, value):
        return self._node(T.as_tensor(value))

    def param(self, p: Parameter):
        """Leaf node bound to ``p``; one node per parameter per tape."""
        node = self._param_nodes.get(id(p))
        if node is None:
            node = self._node(p.value, param=p)
            self._param_nodes[id(p)] = node
        return node

    def _lift(self, x):
        if isinstance(x, Node):
            return x
        if isinstance(x, Parameter):
            return self.param(x)
        return self.constant(x)

    def record(self, kind, *inputs, **attrs):
        """Apply primitive ``kind`` to ``inputs`` and append it to the tape."""
        if kind not in _RULES:
            raise UnsupportedOperationError(f"unsupported primitive {kind!r}")
        nodes = tuple(self._lift(x) for x in inputs)
        arity = _ARITY.get(kind)
        if arity is not None and len(nodes) != arity:
            raise InvalidArgumentError(f"{kind} takes {arity} inputs, got {len(nodes)}")
        if not nodes:
            raise InvalidArgumentError(f"{kind} needs at least one input")
        fwd, _ = _RULES[kind]
        value, saved = fwd([n.value for n in nodes], attrs)
        out = self._node(value)
        self.records.append(Record(kind, nodes, out, attrs, saved))
        return out

    def count(self, kinds=None):
        if kinds is None:
            return len(self.records)
        kinds = {kinds} if isinstance(kinds, str) else set(kinds)
        return sum(1 for r in self.records if r.kind in kinds)

    def replay(self):
        """Recompute every record from the stored leaf values; returns outputs."""
        values = {}
        outs = []
        for rec in self.records:
            vals = [values.get(n.id, n.value) for n in rec.inputs]
            value, _ = _RULES[rec.kind][0](vals, rec.attrs)
            values[rec.output.id] = value
            outs.append(value)
        return outs

    def backward(self, output: Node, seed):
        """Accumulate ``d(sum(seed * output)) / d(param)`` into each ``param.grad``."""
        seed = T.as_tensor(seed)
        if seed.shape != output.value.shape:
            raise ShapeError(f"seed shape {seed.shape} != output shape {output.value.shape}")
        adj = {output.id: seed}
        for rec in reversed(self.records):
            g = adj.pop(rec.output.id, None)
            if g is None:
                continue
            grads = _RULES[rec.kind][1](g, [n.value for n in rec.inputs], rec.output.value,
                                        rec.saved, rec.attrs)
            if rec.kind in _CORRUPTED:
                grads = [-x for x in grads]
            for node, gi in zip(rec.inputs, grads):
                prev = adj.get(node.id)
                adj[node.id] = gi if prev is None else prev + gi
        for node in self._param_nodes.values():
            g = adj.get(node.id)
            if g is not None:
                node.param.grad = node.param.grad + g.reshape(node.param.shape)


def backward(tape: Tape, output: Node, seed):
    tape.backward(output, seed)


def finite_diff_grad(f, p: Parameter, eps=1e-5):
    """Central differences of scalar ``f()`` with respect to every entry of ``p``."""
    if eps <= 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    grad = np.zeros_like(p.value)
    flat = p.value.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f())
        flat[i] = orig - eps
        fm = float(f())
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite loss while differencing {p.name}[{i}]")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def rel_error(a, n):
    a = np.asarray(a)
    n = np.asarray(n)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return np.abs(a - n) / denom


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list
    tol: float

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def failures(self):
        return [e for e in self.entries if not e.passed]

    def lines(self):
        return [f"{'PASS' if e.passed else 'FAIL'} {e.name} max_rel_err={e.max_rel_error:.3e}"
                for e in self.entries]


def grad_check(model, batch, eps=1e-5, tol=1e-4, seed=0):
    """Compare tape gradients to central differences for every model parameter.

    ``model`` must provide ``parameters()`` and ``forward_tape(tape, batch)``.
    The checked functional is ``sum(c * output)`` for a fixed random ``c``.
    """
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    params = model.parameters()
    tape = Tape()
    out = model.forward_tape(tape, batch)
    weights = np.random.default_rng(seed).uniform(-1.0, 1.0, size=out.value.shape)

    def f():
        return float(np.sum(weights * model.forward_tape(Tape(), batch).value))

    zero_grads(params)
    tape.backward(out, weights)
    entries = []
    for p in params:
        numeric = finite_diff_grad(f, p, eps)
        err = float(rel_error(p.grad, numeric).max()) if p.size else 0.0
        entries.append(GradCheckEntry(p.name, err, err < tol))
    zero_grads(params)
    return GradCheckReport(entries, tol)
