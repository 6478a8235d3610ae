"""Reverse-mode automatic differentiation over dense numpy tensors.

The graph is built dynamically: every operation returns a :class:`Node`
holding the forward value, its parents, one vector-Jacobian-product
closure per parent, and the forward callable (kept so a recorded graph
can be replayed and checked for bit-identical recomputation).

Only the primitives the model needs are provided. Each VJP is written by
hand and checked against central finite differences in the test suite.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from . import kernels
from .errors import DimensionError, EvaluationError

Array = np.ndarray


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "parents", "vjps", "fwd", "grad", "name")

    def __init__(self, value, parents=(), vjps=(), fwd=None, name=None):
        self.value = np.asarray(value)
        self.parents = parents
        self.vjps = vjps
        self.fwd = fwd
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    # operator sugar keeps model code readable
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

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def leaf(value, name=None) -> Node:
    return Node(np.asarray(value), name=name)


def constant(value) -> Node:
    return Node(np.asarray(value))


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(np.asarray(x, dtype=np.float64))


def _topo(root: Node) -> list[Node]:
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate gradients of a scalar root into every node's .grad."""
    if root.value.shape != ():
        raise DimensionError(f"backward needs a scalar root, got shape {root.value.shape}")
    if not np.isfinite(root.value):
        raise EvaluationError("non-finite loss value")
    order = _topo(root)
    for n in order:
        n.grad = None
    root.grad = np.ones((), dtype=root.value.dtype)
    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            g = vjp(node.grad)
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


def grad_of(node: Node) -> Array:
    """Gradient of the last backward() pass, zeros if the node was unused."""
    if node.grad is None:
        return np.zeros_like(node.value)
    return node.grad


class Tape:
    """Recorded graph rooted at one node, in topological order."""

    def __init__(self, root: Node):
        self.root = root
        self.order = _topo(root)

    def replay(self) -> Array:
        """Recompute every non-leaf forward value from scratch."""
        values: dict[int, Array] = {}
        for node in self.order:
            if node.fwd is None:
                values[id(node)] = node.value
            else:
                values[id(node)] = node.fwd(*(values[id(p)] for p in node.parents))
        return np.asarray(values[id(self.root)])

    def replay_matches(self) -> bool:
        replayed = self.replay()
        return replayed.shape == self.root.value.shape and np.array_equal(
            replayed, self.root.value)


# ---------------------------------------------------------------------------
# elementwise / broadcasting primitives


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    fwd = lambda av, bv: av + bv
    return Node(fwd(a.value, b.value), (a, b),
                (lambda g: _unbroadcast(g, a.value.shape),
                 lambda g: _unbroadcast(g, b.value.shape)), fwd)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    fwd = lambda av, bv: av - bv
    return Node(fwd(a.value, b.value), (a, b),
                (lambda g: _unbroadcast(g, a.value.shape),
                 lambda g: _unbroadcast(-g, b.value.shape)), fwd)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    fwd = lambda av, bv: av * bv
    return Node(fwd(a.value, b.value), (a, b),
                (lambda g: _unbroadcast(g * b.value, a.value.shape),
                 lambda g: _unbroadcast(g * a.value, b.value.shape)), fwd)


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    fwd = lambda av, bv: av / bv
    return Node(fwd(a.value, b.value), (a, b),
                (lambda g: _unbroadcast(g / b.value, a.value.shape),
                 lambda g: _unbroadcast(-g * a.value / (b.value * b.value),
                                        b.value.shape)), fwd)


def relu(a: Node) -> Node:
    fwd = lambda av: np.maximum(av, 0.0)
    return Node(fwd(a.value), (a,), (lambda g: g * (a.value > 0),), fwd)


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return Node(out, (a,), (lambda g: g * out,), np.exp)


def log(a: Node) -> Node:
    return Node(np.log(a.value), (a,), (lambda g: g / a.value,), np.log)


def sqrt(a: Node) -> Node:
    out = np.sqrt(a.value)
    return Node(out, (a,), (lambda g: g / (2.0 * out),), np.sqrt)


def absolute(a: Node) -> Node:
    # subgradient 0 at 0
    return Node(np.abs(a.value), (a,), (lambda g: g * np.sign(a.value),), np.abs)


def clamp_min(a: Node, floor: float) -> Node:
    fwd = lambda av: np.maximum(av, floor)
    return Node(fwd(a.value), (a,), (lambda g: g * (a.value > floor),), fwd)


# ---------------------------------------------------------------------------
# linear algebra / shape primitives


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise DimensionError(f"matmul supports 1-D/2-D operands, got {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {av.shape} @ {bv.shape}")
    fwd = lambda x, y: x @ y
    if av.ndim == 2 and bv.ndim == 2:
        vjps = (lambda g: g @ bv.T, lambda g: av.T @ g)
    elif av.ndim == 1 and bv.ndim == 2:
        vjps = (lambda g: bv @ g, lambda g: np.outer(av, g))
    elif av.ndim == 2 and bv.ndim == 1:
        vjps = (lambda g: np.outer(g, bv), lambda g: av.T @ g)
    else:
        vjps = (lambda g: g * bv, lambda g: g * av)
    return Node(fwd(av, bv), (a, b), vjps, fwd)


def transpose(a: Node) -> Node:
    return Node(a.value.T, (a,), (lambda g: g.T,), lambda av: av.T)


def reshape(a: Node, shape) -> Node:
    shape = tuple(shape)
    return Node(a.value.reshape(shape), (a,),
                (lambda g: g.reshape(a.value.shape),),
                lambda av: av.reshape(shape))


def slice_cols(a: Node, lo: int, hi: int) -> Node:
    def vjp(g):
        out = np.zeros_like(a.value)
        out[..., lo:hi] = g
        return out

    fwd = lambda av: av[..., lo:hi]
    return Node(fwd(a.value), (a,), (vjp,), fwd)


def concat(nodes: list[Node], axis: int = -1) -> Node:
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def make_vjp(i):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            return g[tuple(sl)]
        return vjp

    fwd = lambda *vals: np.concatenate(vals, axis=axis)
    return Node(fwd(*(n.value for n in nodes)), tuple(nodes),
                tuple(make_vjp(i) for i in range(len(nodes))), fwd)


def sum_(a: Node, axis=None, keepdims: bool = False) -> Node:
    fwd = lambda av: av.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.value.shape).copy()

    return Node(fwd(a.value), (a,), (vjp,), fwd)


def mean(a: Node, axis=None, keepdims: bool = False) -> Node:
    if axis is None:
        count = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.value.shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def gather_rows(table: Node, ids) -> Node:
    ids = np.asarray(ids, dtype=np.int64)

    def vjp(g):
        out = np.zeros_like(table.value)
        np.add.at(out, ids, g)
        return out

    fwd = lambda tv: tv[ids]
    return Node(fwd(table.value), (table,), (vjp,), fwd)


def repeat_rows(a: Node, durations) -> Node:
    """Repeat row i durations[i] times (length regulation)."""
    durations = np.asarray(durations, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(durations)[:-1]])

    def vjp(g):
        return np.add.reduceat(g, starts, axis=0)

    fwd = lambda av: np.repeat(av, durations, axis=0)
    return Node(fwd(a.value), (a,), (vjp,), fwd)


# ---------------------------------------------------------------------------
# composite numeric primitives with hand-written VJPs


def softmax(logits: Node) -> Node:
    """Numerically stable softmax over the last axis."""
    if logits.value.size == 0:
        raise DimensionError("softmax of an empty vector")

    def fwd(z):
        shifted = z - z.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)

    out = fwd(logits.value)

    def vjp(g):
        return out * (g - (g * out).sum(axis=-1, keepdims=True))

    return Node(out, (logits,), (vjp,), fwd)


def layer_norm_core(x: Node, eps: float) -> Node:
    """(x - mean) / sqrt(population var + eps) over the last axis."""
    d = x.value.shape[-1]

    def fwd(xv):
        mu = xv.mean(axis=-1, keepdims=True)
        xc = xv - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc / np.sqrt(var + eps)

    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return inv * (g - gm - y * gy)

    return Node(y, (x,), (vjp,), fwd)


def layer_norm(x: Node, gamma, beta, eps: float) -> Node:
    """Conventional layer norm: normalized x scaled by gamma, shifted by beta."""
    return add(mul(layer_norm_core(x, eps), gamma), beta)


def conv2d(x: Node, w: Node, stride: int = 2) -> Node:
    """Same-padded strided 2-D convolution; see kernels module for backends."""
    if x.value.ndim != 3 or w.value.ndim != 4:
        raise DimensionError(
            f"conv2d expects (H,W,Cin) and (kh,kw,Cin,Cout), got {x.value.shape} and {w.value.shape}")
    if x.value.shape[2] != w.value.shape[2]:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.value.shape} vs weight {w.value.shape}")
    fwd = lambda xv, wv: kernels.conv2d_forward(xv, wv, stride)
    return Node(fwd(x.value, w.value), (x, w),
                (lambda g: kernels.conv2d_backward_x(g, w.value, x.value.shape, stride),
                 lambda g: kernels.conv2d_backward_w(g, x.value, w.value.shape, stride)),
                fwd)


# ---------------------------------------------------------------------------
# gradient checking


class GradCheckReport(dict):
    """Per-parameter max relative error; .max_error / .ok summarize."""

    @property
    def max_error(self) -> float:
        return max(self.values(), default=0.0)

    def ok(self, tolerance: float) -> bool:
        return self.max_error < tolerance


def check_gradients(loss_fn: Callable[[Mapping[str, Node]], Node],
                    tensors: Mapping[str, Array],
                    step: float = 1e-4,
                    tolerance: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients against central finite differences.

    ``loss_fn`` maps a dict of named leaf nodes to a scalar loss node. The
    finite-difference side re-evaluates the loss from scratch at 64-bit
    precision; relative error uses max(|analytic|, |numeric|, 1e-8).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = {k: np.asarray(v, dtype=np.float64).copy() for k, v in tensors.items()}

    def eval_loss(values) -> float:
        out = loss_fn({k: leaf(v, name=k) for k, v in values.items()})
        val = float(out.value)
        if not np.isfinite(val):
            raise EvaluationError("loss is non-finite during gradient check")
        return val

    leaves = {k: leaf(v, name=k) for k, v in base.items()}
    loss = loss_fn(leaves)
    if not np.isfinite(loss.value):
        raise EvaluationError("loss is non-finite during gradient check")
    backward(loss)
    analytic = {k: grad_of(n) for k, n in leaves.items()}

    report = GradCheckReport()
    for name, arr in base.items():
        worst = 0.0
        flat = arr.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = eval_loss(base)
            flat[i] = orig - step
            fm = eval_loss(base)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            denom = max(abs(ana[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(ana[i] - numeric) / denom)
        report[name] = worst
    return report
