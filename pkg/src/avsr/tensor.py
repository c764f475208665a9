"""Dense float64 tensor graph with taped reverse-mode differentiation.

The op set is closed: every differentiable operation lives in the ``_OPS``
registry with a forward rule and a backward rule, so the whole surface can
be swept by one finite-difference property test. Graphs are built eagerly
(forward values computed at construction), can be re-executed after a
parameter is perturbed (``Graph.recompute``), and are walked once in
reverse by ``Graph.backward``.

Conventions:
  - all values are float64 ndarrays, row-major;
  - every forward output is checked finite, so NaN/Inf cannot leak out of
    a public op without raising;
  - scalar losses have shape (1,).
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .errors import NumericError, ShapeError

LAYERNORM_EPS = 1e-6  # inside the variance denominator; zero-variance rows map to zeros


def _as_f64(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Node:
    """One taped operation: op tag, parent nodes, output value, cached context."""

    __slots__ = ("idx", "op", "parents", "value", "attrs", "cache", "grad", "trainable", "name")

    def __init__(self, idx, op, parents, value, attrs=None):
        self.idx = idx
        self.op = op
        self.parents = parents
        self.value = value
        self.attrs = attrs or {}
        self.cache = None
        self.grad = None
        self.trainable = False
        self.name = None

    @property
    def shape(self):
        return self.value.shape


# ---------------------------------------------------------------------------
# op registry: tag -> (forward, backward)
#   forward(values, attrs, cache) -> (out, cache)   cache is reused on recompute
#   backward(grad, values, attrs, cache, out) -> per-parent grads (None = no grad)
# ---------------------------------------------------------------------------

_OPS: dict[str, tuple[Callable, Callable]] = {}


def _op(tag):
    def register(pair):
        _OPS[tag] = pair
        return pair

    return register


def _fwd_matmul(vals, attrs, cache):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot contract {a.shape} with {b.shape}")
    return a @ b, None


def _bwd_matmul(g, vals, attrs, cache, out):
    a, b = vals
    return [g @ b.T, a.T @ g]


_op("matmul")((_fwd_matmul, _bwd_matmul))


def _fwd_add(vals, attrs, cache):
    a, b = vals
    try:
        return a + b, None
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc


def _bwd_add(g, vals, attrs, cache, out):
    a, b = vals
    return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]


_op("add")((_fwd_add, _bwd_add))


def _fwd_mul(vals, attrs, cache):
    a, b = vals
    try:
        return a * b, None
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc


def _bwd_mul(g, vals, attrs, cache, out):
    a, b = vals
    return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


_op("mul")((_fwd_mul, _bwd_mul))


def _fwd_scale(vals, attrs, cache):
    return vals[0] * attrs["factor"], None


def _bwd_scale(g, vals, attrs, cache, out):
    return [g * attrs["factor"]]


_op("scale")((_fwd_scale, _bwd_scale))


def _fwd_concat_last(vals, attrs, cache):
    lead = vals[0].shape[:-1]
    for v in vals[1:]:
        if v.shape[:-1] != lead:
            raise ShapeError(f"concat_last: leading dims differ, {vals[0].shape} vs {v.shape}")
    return np.concatenate(vals, axis=-1), None


def _bwd_concat_last(g, vals, attrs, cache, out):
    widths = [v.shape[-1] for v in vals]
    splits = np.cumsum(widths)[:-1]
    return list(np.split(g, splits, axis=-1))


_op("concat_last")((_fwd_concat_last, _bwd_concat_last))


def _fwd_relu(vals, attrs, cache):
    return np.maximum(vals[0], 0.0), None


def _bwd_relu(g, vals, attrs, cache, out):
    return [g * (vals[0] > 0)]


_op("relu")((_fwd_relu, _bwd_relu))


def _masked_softmax(a, mask):
    if a.shape[-1] == 0:
        raise ShapeError("softmax_last: empty last axis")
    if mask is not None:
        try:
            mask = np.broadcast_to(mask, a.shape)
        except ValueError as exc:
            raise ShapeError(f"softmax_last: mask shape {np.shape(mask)} does not broadcast to {a.shape}") from exc
        if not mask.any(axis=-1).all():
            raise NumericError("softmax_last: a row has every position masked")
        a = np.where(mask, a, -np.inf)
    m = np.max(a, axis=-1, keepdims=True)
    e = np.exp(a - m)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def _fwd_softmax_last(vals, attrs, cache):
    y = _masked_softmax(vals[0], attrs.get("mask"))
    return y, None


def _bwd_softmax_last(g, vals, attrs, cache, out):
    y = out
    dot = (g * y).sum(axis=-1, keepdims=True)
    return [y * (g - dot)]


_op("softmax_last")((_fwd_softmax_last, _bwd_softmax_last))


def _fwd_log_softmax_last(vals, attrs, cache):
    a = vals[0]
    if a.shape[-1] == 0:
        raise ShapeError("log_softmax_last: empty last axis")
    m = np.max(a, axis=-1, keepdims=True)
    z = a - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return z - lse, None


def _bwd_log_softmax_last(g, vals, attrs, cache, out):
    return [g - np.exp(out) * g.sum(axis=-1, keepdims=True)]


_op("log_softmax_last")((_fwd_log_softmax_last, _bwd_log_softmax_last))


def _fwd_layer_norm(vals, attrs, cache):
    a, gain, bias = vals
    if gain.shape != (a.shape[-1],) or bias.shape != (a.shape[-1],):
        raise ShapeError(f"layer_norm: affine params {gain.shape}/{bias.shape} do not match last axis of {a.shape}")
    mu = a.mean(axis=-1, keepdims=True)
    var = ((a - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYERNORM_EPS)
    xhat = (a - mu) * inv
    return xhat * gain + bias, (xhat, inv)


def _bwd_layer_norm(g, vals, attrs, cache, out):
    a, gain, bias = vals
    xhat, inv = cache
    dxhat = g * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    lead = tuple(range(a.ndim - 1))
    return [dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)]


_op("layer_norm")((_fwd_layer_norm, _bwd_layer_norm))


def _fwd_embedding(vals, attrs, cache):
    table = vals[0]
    ids = attrs["ids"]
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-d, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: index out of range for table with {table.shape[0]} rows")
    return table[ids], None


def _bwd_embedding(g, vals, attrs, cache, out):
    gt = np.zeros_like(vals[0])
    np.add.at(gt, attrs["ids"], g)
    return [gt]


_op("embedding")((_fwd_embedding, _bwd_embedding))


def _fwd_take_flat(vals, attrs, cache):
    flat = vals[0].reshape(-1)
    idx = attrs["idx"]
    return flat[idx], None


def _bwd_take_flat(g, vals, attrs, cache, out):
    ga = np.zeros(vals[0].size)
    np.add.at(ga, attrs["idx"].reshape(-1), g.reshape(-1))
    return [ga.reshape(vals[0].shape)]


_op("take_flat")((_fwd_take_flat, _bwd_take_flat))


def _fwd_mean_axis(vals, attrs, cache):
    return vals[0].mean(axis=attrs["axis"]), None


def _bwd_mean_axis(g, vals, attrs, cache, out):
    a = vals[0]
    axis = attrs["axis"]
    return [np.broadcast_to(np.expand_dims(g, axis), a.shape) / a.shape[axis]]


_op("mean_axis")((_fwd_mean_axis, _bwd_mean_axis))


def _fwd_sum_all(vals, attrs, cache):
    return np.array([vals[0].sum()]), None


def _bwd_sum_all(g, vals, attrs, cache, out):
    return [np.full(vals[0].shape, g[0])]


_op("sum_all")((_fwd_sum_all, _bwd_sum_all))


def _fwd_mean_all(vals, attrs, cache):
    return np.array([vals[0].mean()]), None


def _bwd_mean_all(g, vals, attrs, cache, out):
    return [np.full(vals[0].shape, g[0] / vals[0].size)]


_op("mean_all")((_fwd_mean_all, _bwd_mean_all))


def _fwd_transpose(vals, attrs, cache):
    a = vals[0]
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d input, got {a.shape}")
    return a.T.copy(), None


def _bwd_transpose(g, vals, attrs, cache, out):
    return [g.T]


_op("transpose")((_fwd_transpose, _bwd_transpose))


def _fwd_reshape(vals, attrs, cache):
    return vals[0].reshape(attrs["shape"]), None


def _bwd_reshape(g, vals, attrs, cache, out):
    return [g.reshape(vals[0].shape)]


_op("reshape")((_fwd_reshape, _bwd_reshape))


def _fwd_max_last(vals, attrs, cache):
    a = vals[0]
    if a.shape[-1] == 0:
        raise ShapeError("max_last: empty last axis")
    arg = a.argmax(axis=-1)
    return np.take_along_axis(a, arg[..., None], axis=-1)[..., 0], arg


def _bwd_max_last(g, vals, attrs, cache, out):
    ga = np.zeros_like(vals[0])
    np.put_along_axis(ga, cache[..., None], g[..., None], axis=-1)
    return [ga]


_op("max_last")((_fwd_max_last, _bwd_max_last))


def _fwd_pad(vals, attrs, cache):
    return np.pad(vals[0], attrs["widths"], constant_values=attrs.get("value", 0.0)), None


def _bwd_pad(g, vals, attrs, cache, out):
    sl = tuple(slice(lo, g.shape[i] - hi) for i, (lo, hi) in enumerate(attrs["widths"]))
    return [g[sl]]


_op("pad")((_fwd_pad, _bwd_pad))


def _fwd_dropout(vals, attrs, cache):
    p = attrs["p"]
    if cache is None:
        rng = attrs["rng"]
        cache = (rng.random(vals[0].shape) >= p).astype(np.float64)
    return vals[0] * cache / (1.0 - p), cache


def _bwd_dropout(g, vals, attrs, cache, out):
    return [g * cache / (1.0 - attrs["p"])]


_op("dropout")((_fwd_dropout, _bwd_dropout))


# ---------------------------------------------------------------------------
# graph
# ---------------------------------------------------------------------------


class Graph:
    """Single-threaded tape. Nodes reference only earlier nodes by construction."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    # -- construction -------------------------------------------------------

    def _append(self, node: Node) -> Node:
        node.idx = len(self.nodes)
        self.nodes.append(node)
        return node

    def parameter(self, name: str, value) -> Node:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        v = _as_f64(value)
        node = self._append(Node(0, "param", (), v))
        node.trainable = True
        node.name = name
        self.params[name] = node
        return node

    def constant(self, value) -> Node:
        return self._append(Node(0, "const", (), _as_f64(value)))

    def op(self, tag: str, *inputs: Node, **attrs) -> Node:
        if tag not in _OPS:
            raise KeyError(f"unknown op {tag!r}; the op set is closed")
        fwd, _ = _OPS[tag]
        vals = [n.value for n in inputs]
        with np.errstate(over="ignore", invalid="ignore"):
            out, cache = fwd(vals, attrs, None)
        out = _as_f64(out)
        if not np.isfinite(out).all():
            raise NumericError(f"{tag}: non-finite values in output")
        node = self._append(Node(0, tag, tuple(inputs), out, attrs))
        node.cache = cache
        return node

    # -- execution ----------------------------------------------------------

    def recompute(self) -> None:
        """Re-run every op in order from current parameter/constant values.

        Cached randomness (dropout masks) is reused so the function being
        differentiated is the same one the finite differences probe.
        """
        for node in self.nodes:
            if node.op in ("param", "const"):
                continue
            fwd, _ = _OPS[node.op]
            out, cache = fwd([p.value for p in node.parents], node.attrs, node.cache)
            node.value = _as_f64(out)
            node.cache = cache

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Populate gradients from a scalar loss; return {param name: grad}.

        Parameters not reachable from the loss get zero gradients of the
        parameter's shape.
        """
        if loss.value.shape not in ((), (1,)):
            raise NumericError(f"backward: loss must be scalar, got shape {loss.value.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.idx + 1]):
            if node.grad is None or not node.parents:
                continue
            _, bwd = _OPS[node.op]
            grads = bwd(node.grad, [p.value for p in node.parents], node.attrs, node.cache, node.value)
            for parent, g in zip(node.parents, grads):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad += g
        out = {}
        for name, node in self.params.items():
            out[name] = node.grad if node.grad is not None else np.zeros_like(node.value)
        return out


def grad_check(graph: Graph, loss: Node, name: Optional[str] = None, h: float = 1e-6) -> float:
    """Max relative error between taped gradients and central differences.

    Perturbs each entry of each checked parameter by ±h, re-runs the graph,
    and compares against the analytic gradient using
    |analytic - fd| / max(|analytic|, |fd|, 1e-12). Returns 0.0 for a graph
    with no (matching) parameters.
    """
    names = [name] if name is not None else list(graph.params)
    grads = graph.backward(loss)
    worst = 0.0
    for pname in names:
        pnode = graph.params[pname]
        analytic = grads[pname].reshape(-1)
        flat = pnode.value.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            graph.recompute()
            up = float(loss.value.sum())
            flat[i] = keep - h
            graph.recompute()
            down = float(loss.value.sum())
            flat[i] = keep
            fd = (up - down) / (2.0 * h)
            err = abs(analytic[i] - fd) / max(abs(analytic[i]), abs(fd), 1e-12)
            worst = max(worst, err)
        graph.recompute()
    return worst


def op_tags() -> list[str]:
    """Tags of every registered differentiable op (the closed set)."""
    return sorted(_OPS)


def register_op(tag: str, forward: Callable, backward: Callable) -> None:
    """Internal hook for sibling modules that contribute a primitive (CTC)."""
    if tag in _OPS:
        raise ValueError(f"op {tag!r} already registered")
    _OPS[tag] = (forward, backward)
