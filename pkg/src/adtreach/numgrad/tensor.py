"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Graph` records every op applied to its tensors in execution order,
so the tape is topologically sorted by construction. Parameters are named
leaf tensors; :func:`backward` returns one gradient per registered name.

Images use the NHWC layout; convolution weights are ``(3, 3, C_in, C_out)``.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import kernels

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """An op received inputs whose shapes do not fit its geometry."""

    def __init__(self, kind: str, shapes, detail: str = ""):
        msg = f"{kind}: incompatible input shapes {[tuple(s) for s in shapes]}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.kind = kind
        self.shapes = [tuple(s) for s in shapes]


class Tensor:
    """A value produced inside a :class:`Graph`."""

    __slots__ = ("data", "_graph", "index", "requires_grad", "name")

    def __init__(self, data: np.ndarray, graph: "Graph", index: int,
                 requires_grad: bool, name: str | None = None):
        self.data = data
        # weak, so a dropped graph is freed at once instead of waiting for the cycle collector
        self._graph = weakref.ref(graph)
        self.index = index
        self.requires_grad = requires_grad
        self.name = name

    @property
    def graph(self) -> "Graph":
        g = self._graph()
        if g is None:
            raise ReferenceError("the graph this tensor belongs to no longer exists")
        return g

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all of these go through Graph.apply
    def __add__(self, other: "Tensor") -> "Tensor":
        return self.graph.apply("add", self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return self.graph.apply("mul", self, other)

    def scale(self, c: float) -> "Tensor":
        return self.graph.apply("scale", self, c=float(c))


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    output: int
    ctx: Any = None
    attrs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OpDef:
    arity: int
    forward: Callable
    backward: Callable


OPS: dict[str, OpDef] = {}


def _register(kind: str, arity: int):
    def deco(cls):
        OPS[kind] = OpDef(arity, cls.forward, cls.backward)
        return cls
    return deco


# ---------------------------------------------------------------------------
# op definitions: forward(arrays, attrs) -> (out, ctx);
# backward(g, ctx, arrays, attrs, needs) -> tuple of input grads (or None)


@_register("conv2d", 3)
class _Conv2d:
    @staticmethod
    def forward(xs, attrs):
        x, w, b = xs
        if (x.ndim != 4 or w.shape[:2] != (3, 3) or w.ndim != 4
                or w.shape[2] != x.shape[3] or b.shape != (w.shape[3],)):
            raise ShapeError("conv2d", [a.shape for a in xs], "x NHWC, w (3,3,C,O), b (O,)")
        n, h, wd, c = x.shape
        cols = kernels.im2col3x3(np.ascontiguousarray(x))
        out = cols @ w.reshape(9 * c, -1)
        out += b
        return out.reshape(n, h, wd, -1), cols

    @staticmethod
    def backward(g, cols, xs, attrs, needs):
        x, w, _ = xs
        n, h, wd, c = x.shape
        g2 = g.reshape(-1, w.shape[3])
        dx = dw = db = None
        if needs[0]:
            dcols = g2 @ w.reshape(9 * c, -1).T
            dx = kernels.col2im3x3(np.ascontiguousarray(dcols), n, h, wd, c)
        if needs[1]:
            dw = (cols.T @ g2).reshape(w.shape)
        if needs[2]:
            db = g2.sum(axis=0)
        return dx, dw, db


@_register("maxpool2x2", 1)
class _MaxPool:
    @staticmethod
    def forward(xs, attrs):
        (x,) = xs
        if x.ndim != 4 or x.shape[1] % 2 or x.shape[2] % 2:
            raise ShapeError("maxpool2x2", [x.shape], "needs NHWC with even H and W")
        return kernels.maxpool2x2_fwd(np.ascontiguousarray(x))

    @staticmethod
    def backward(g, arg, xs, attrs, needs):
        return (kernels.maxpool2x2_bwd(np.ascontiguousarray(g), arg),)


@_register("relu", 1)
class _Relu:
    @staticmethod
    def forward(xs, attrs):
        mask = xs[0] > 0
        return np.where(mask, xs[0], 0.0), mask

    @staticmethod
    def backward(g, mask, xs, attrs, needs):
        # subgradient at exactly 0 is 0
        return (g * mask,)


@_register("sigmoid", 1)
class _Sigmoid:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out, out

    @staticmethod
    def backward(g, out, xs, attrs, needs):
        return (g * out * (1.0 - out),)


@_register("softmax", 1)
class _Softmax:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=-1, keepdims=True)
        return out, out

    @staticmethod
    def backward(g, out, xs, attrs, needs):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


@_register("linear", 3)
class _Linear:
    @staticmethod
    def forward(xs, attrs):
        x, w, b = xs
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
            raise ShapeError("linear", [a.shape for a in xs], "x (N,F), w (F,O), b (O,)")
        return x @ w + b, None

    @staticmethod
    def backward(g, ctx, xs, attrs, needs):
        x, w, _ = xs
        return (g @ w.T if needs[0] else None,
                x.T @ g if needs[1] else None,
                g.sum(axis=0) if needs[2] else None)


def _same_shape(kind, a, b):
    if a.shape != b.shape:
        raise ShapeError(kind, [a.shape, b.shape], "no broadcasting")


@_register("add", 2)
class _Add:
    @staticmethod
    def forward(xs, attrs):
        _same_shape("add", *xs)
        return xs[0] + xs[1], None

    @staticmethod
    def backward(g, ctx, xs, attrs, needs):
        return g, g


@_register("mul", 2)
class _Mul:
    @staticmethod
    def forward(xs, attrs):
        _same_shape("mul", *xs)
        return xs[0] * xs[1], None

    @staticmethod
    def backward(g, ctx, xs, attrs, needs):
        return g * xs[1], g * xs[0]


@_register("scale", 1)
class _Scale:
    @staticmethod
    def forward(xs, attrs):
        return xs[0] * attrs["c"], None

    @staticmethod
    def backward(g, ctx, xs, attrs, needs):
        return (g * attrs["c"],)


@_register("log", 1)
class _Log:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        keep = x >= LOG_FLOOR
        return np.log(np.where(keep, x, LOG_FLOOR)), keep

    @staticmethod
    def backward(g, keep, xs, attrs, needs):
        return (np.where(keep, g / np.where(keep, xs[0], 1.0), 0.0),)


@_register("reshape", 1)
class _Reshape:
    @staticmethod
    def forward(xs, attrs):
        x = xs[0]
        try:
            return x.reshape(attrs["shape"]), None
        except ValueError:
            raise ShapeError("reshape", [x.shape], f"target {attrs['shape']}") from None

    @staticmethod
    def backward(g, ctx, xs, attrs, needs):
        return (g.reshape(xs[0].shape),)


@_register("concat", 2)
class _Concat:
    @staticmethod
    def forward(xs, attrs):
        a, b = xs
        if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
            raise ShapeError("concat", [a.shape, b.shape], "needs (N,A) and (N,B)")
        return np.concatenate([a, b], axis=1), a.shape[1]

    @staticmethod
    def backward(g, split, xs, attrs, needs):
        return g[:, :split], g[:, split:]


@_register("mse", 2)
class _HalfMeanSquare:
    """(1/2m) sum_j ||pred_j - target_j||^2 over the leading batch axis."""

    @staticmethod
    def forward(xs, attrs):
        p, t = xs
        if p.shape != t.shape or p.ndim != 2 or p.shape[0] == 0:
            raise ShapeError("mse", [p.shape, t.shape], "needs equal non-empty (m, D)")
        d = p - t
        return np.array(0.5 * np.sum(d * d) / p.shape[0]), d

    @staticmethod
    def backward(g, d, xs, attrs, needs):
        m = d.shape[0]
        return g * d / m, -g * d / m


@_register("nll", 1)
class _Nll:
    """-(1/m) sum_j log p_j[label_j]; log clamped at LOG_FLOOR."""

    @staticmethod
    def forward(xs, attrs):
        (p,) = xs
        labels = attrs["labels"]
        if p.ndim != 2 or p.shape[0] == 0 or labels.shape != (p.shape[0],):
            raise ShapeError("nll", [p.shape, labels.shape], "needs (m, K) and m labels")
        picked = p[np.arange(p.shape[0]), labels]
        keep = picked >= LOG_FLOOR
        val = -np.sum(np.log(np.where(keep, picked, LOG_FLOOR))) / p.shape[0]
        return np.array(val), (picked, keep)

    @staticmethod
    def backward(g, ctx, xs, attrs, needs):
        picked, keep = ctx
        (p,) = xs
        m = p.shape[0]
        dp = np.zeros_like(p)
        rows = np.arange(m)
        dp[rows, attrs["labels"]] = np.where(keep, -g / (m * np.where(keep, picked, 1.0)), 0.0)
        return (dp,)


# ---------------------------------------------------------------------------


class Graph:
    """Records ops in execution order; parameters are named leaves."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.values: list[Tensor] = []
        self.parameters: dict[str, Tensor] = {}

    def _leaf(self, data, requires_grad, name=None) -> Tensor:
        arr = np.asarray(data, dtype=np.float64)
        t = Tensor(arr, self, len(self.values), requires_grad, name)
        self.values.append(t)
        return t

    def param(self, name: str, data: np.ndarray) -> Tensor:
        """Register a trainable leaf. The array is used as-is (not copied)."""
        if name in self.parameters:
            raise KeyError(f"parameter {name!r} already registered")
        t = self._leaf(data, True, name)
        self.parameters[name] = t
        return t

    def constant(self, data, name: str | None = None) -> Tensor:
        return self._leaf(data, False, name)

    def apply(self, kind: str, *inputs: Tensor, **attrs) -> Tensor:
        op = OPS.get(kind)
        if op is None:
            raise KeyError(f"unknown op kind {kind!r}")
        if len(inputs) != op.arity:
            raise ShapeError(kind, [t.shape for t in inputs], f"expects {op.arity} inputs")
        for t in inputs:
            if t.graph is not self:
                raise ValueError(f"{kind}: input belongs to another graph")
        arrays = [t.data for t in inputs]
        out, ctx = op.forward(arrays, attrs)
        req = any(t.requires_grad for t in inputs)
        t = Tensor(np.asarray(out, dtype=np.float64), self, len(self.values), req)
        self.values.append(t)
        self.nodes.append(Node(kind, tuple(i.index for i in inputs), t.index, ctx if req else None, attrs))
        return t


def forward_op(kind: str, inputs: list[Tensor], **attrs) -> Tensor:
    """Apply one op kind to tensors of a shared graph."""
    if not inputs:
        raise ValueError(f"{kind}: no inputs")
    return inputs[0].graph.apply(kind, *inputs, **attrs)


def backward(graph: Graph, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to every registered parameter.

    Parameters the loss does not depend on get a zero gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.data)}
    values = graph.values
    for node in reversed(graph.nodes):
        g = grads.pop(node.output, None)
        if g is None or not values[node.output].requires_grad:
            continue
        ins = [values[i] for i in node.inputs]
        needs = [t.requires_grad for t in ins]
        op = OPS[node.kind]
        in_grads = op.backward(g, node.ctx, [t.data for t in ins], node.attrs, needs)
        for t, need, gi in zip(ins, needs, in_grads):
            if not need or gi is None:
                continue
            prev = grads.get(t.index)
            grads[t.index] = gi if prev is None else prev + gi
    return {
        name: grads.get(t.index, np.zeros_like(t.data)).reshape(t.shape)
        for name, t in graph.parameters.items()
    }
