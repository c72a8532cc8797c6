"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Graph` records every operation eagerly (values are computed at
the moment a node is appended) and keeps the parents so that
:func:`backward` can sweep the nodes in reverse id order.  Node ids are
dense integers ``0..len(graph)-1`` and parents always precede children,
so reverse id order is a valid reverse topological order and gradient
accumulation order is fixed.

Supported op kinds::

    leaf, add, sub, scale, matvec, mul, leaky_relu, reshape, sum_squares,
    permute

``matvec`` multiplies a matrix ``(m, n)`` with a vector ``(n,)`` or a batch
of row vectors ``(B, n)``.  ``add``/``sub`` broadcast a trailing-shape
operand (e.g. a bias ``(m,)`` against ``(B, m)``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LEAKY_SLOPE = 0.01

OP_KINDS = (
    "leaf",
    "add",
    "sub",
    "scale",
    "matvec",
    "mul",
    "leaky_relu",
    "reshape",
    "sum_squares",
    "permute",
)


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class ContractError(RuntimeError):
    """A documented precondition was violated by the caller."""


@dataclass
class Node:
    id: int
    kind: str
    parents: tuple[int, ...]
    value: np.ndarray
    requires_grad: bool
    params: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


def _as_tensor(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    arr.setflags(write=False)
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _suffix_broadcastable(big: tuple, small: tuple) -> bool:
    return len(small) <= len(big) and big[len(big) - len(small):] == small


class Graph:
    """Append-only computation graph.

    ``seed`` is recorded for replay; the graph itself draws no random
    numbers.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def value(self, node_id: int) -> np.ndarray:
        return self.nodes[node_id].value

    def _append(self, kind, parents, value, params=None) -> int:
        requires_grad = any(self.nodes[p].requires_grad for p in parents)
        node = Node(len(self.nodes), kind, tuple(parents), _frozen(value),
                    requires_grad, params or {})
        self.nodes.append(node)
        return node.id

    def _check(self, parent_ids):
        for p in parent_ids:
            if not (0 <= p < len(self.nodes)):
                raise ContractError(f"unknown parent node id {p}")

    # -- op constructors -------------------------------------------------

    def leaf(self, value, requires_grad: bool = True) -> int:
        arr = _as_tensor(value)
        if not np.all(np.isfinite(arr)):
            raise ValueError("leaf values must be finite")
        node = Node(len(self.nodes), "leaf", (), arr, requires_grad)
        self.nodes.append(node)
        return node.id

    def constant(self, value) -> int:
        return self.leaf(value, requires_grad=False)

    def add(self, a: int, b: int) -> int:
        return self._binary("add", a, b)

    def sub(self, a: int, b: int) -> int:
        return self._binary("sub", a, b)

    def _binary(self, kind, a, b):
        self._check((a, b))
        va, vb = self.nodes[a].value, self.nodes[b].value
        if va.shape != vb.shape and not _suffix_broadcastable(va.shape, vb.shape):
            raise ShapeError(f"{kind}: incompatible shapes {va.shape} and {vb.shape}")
        return self._append(kind, (a, b), _compute(kind, (va, vb), {}))

    def scale(self, a: int, factor: float) -> int:
        self._check((a,))
        factor = float(factor)
        params = {"factor": factor}
        return self._append("scale", (a,), _compute("scale", (self.nodes[a].value,), params), params)

    def matvec(self, w: int, x: int) -> int:
        self._check((w, x))
        vw, vx = self.nodes[w].value, self.nodes[x].value
        if vw.ndim != 2 or vx.ndim not in (1, 2) or vx.shape[-1] != vw.shape[1]:
            raise ShapeError(f"matvec: matrix {vw.shape} incompatible with {vx.shape}")
        return self._append("matvec", (w, x), _compute("matvec", (vw, vx), {}))

    def mul(self, a: int, b: int) -> int:
        self._check((a, b))
        va, vb = self.nodes[a].value, self.nodes[b].value
        if va.shape != vb.shape and not _suffix_broadcastable(va.shape, vb.shape):
            raise ShapeError(f"mul: incompatible shapes {va.shape} and {vb.shape}")
        return self._append("mul", (a, b), _compute("mul", (va, vb), {}))

    def leaky_relu(self, a: int) -> int:
        self._check((a,))
        va = self.nodes[a].value
        return self._append("leaky_relu", (a,), _compute("leaky_relu", (va,), {}))

    def reshape(self, a: int, shape) -> int:
        self._check((a,))
        va = self.nodes[a].value
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != va.size:
            raise ShapeError(f"reshape: cannot view {va.shape} as {shape}")
        return self._append("reshape", (a,), va.reshape(shape).copy(), {"shape": shape})

    def sum_squares(self, a: int) -> int:
        self._check((a,))
        va = self.nodes[a].value
        return self._append("sum_squares", (a,), _compute("sum_squares", (va,), {}))

    def permute(self, a: int, index) -> int:
        """Gather the last axis: ``out[..., j] = a[..., index[j]]``.

        ``index`` must be a permutation of ``range(a.shape[-1])``.
        """
        self._check((a,))
        va = self.nodes[a].value
        index = np.asarray(index, dtype=np.intp)
        if index.shape != (va.shape[-1],):
            raise ShapeError(f"permute: index of length {index.size} vs last axis {va.shape}")
        return self._append("permute", (a,), va[..., index], {"index": index})

    def mse(self, a: int, b: int) -> int:
        """Mean squared error, built from ``sub``, ``sum_squares`` and ``scale``."""
        diff = self.sub(a, b)
        return self.scale(self.sum_squares(diff), 1.0 / self.nodes[diff].value.size)


def forward_op(graph: Graph, kind: str, parent_ids, params=None) -> int:
    """Generic entry point: append a node of ``kind`` and return its id."""
    params = params or {}
    parent_ids = list(parent_ids)
    if kind == "leaf":
        return graph.leaf(params["value"], params.get("requires_grad", True))
    if kind in ("add", "sub", "mul", "matvec"):
        if len(parent_ids) != 2:
            raise ContractError(f"{kind} takes two parents, got {len(parent_ids)}")
        return getattr(graph, kind)(*parent_ids)
    if kind in ("leaky_relu", "relu_like"):
        return graph.leaky_relu(*parent_ids)
    if kind == "sum_squares":
        return graph.sum_squares(*parent_ids)
    if kind == "scale":
        return graph.scale(parent_ids[0], params["factor"])
    if kind == "reshape":
        return graph.reshape(parent_ids[0], params["shape"])
    if kind == "permute":
        return graph.permute(parent_ids[0], params["index"])
    raise ContractError(f"unknown op kind {kind!r}")


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead)))


def backward(graph: Graph, root: int) -> dict[int, np.ndarray]:
    """Gradients of the scalar ``root`` w.r.t. every trainable leaf.

    Returns a mapping ``leaf id -> gradient`` covering every leaf created with
    ``requires_grad=True``; leaves that do not influence ``root`` get zeros.
    Constant leaves are omitted.
    """
    nodes = graph.nodes
    if not (0 <= root < len(nodes)):
        raise ContractError(f"unknown root node {root}")
    if nodes[root].value.shape != (1,):
        raise ContractError(
            f"backward needs a scalar root of shape (1,), got {nodes[root].value.shape}")

    grads: dict[int, np.ndarray] = {root: np.ones(1)}
    for node in reversed(nodes[: root + 1]):
        g = grads.pop(node.id, None) if node.kind != "leaf" else grads.get(node.id)
        if g is None or node.kind == "leaf" or not node.requires_grad:
            continue
        for pid, pg in zip(node.parents, _vjp(graph, node, g)):
            if pg is None or not nodes[pid].requires_grad:
                continue
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg

    out = {}
    for node in nodes:
        if node.kind == "leaf" and node.requires_grad:
            g = grads.get(node.id)
            out[node.id] = _frozen(g) if g is not None else _frozen(np.zeros_like(node.value))
    return out


def _vjp(graph: Graph, node: Node, g: np.ndarray):
    nodes = graph.nodes
    kind = node.kind
    if kind == "add":
        a, b = (nodes[p] for p in node.parents)
        return g, _reduce_to(g, b.shape)
    if kind == "sub":
        a, b = (nodes[p] for p in node.parents)
        return g, -_reduce_to(g, b.shape)
    if kind == "scale":
        return (g * node.params["factor"],)
    if kind == "matvec":
        w, x = (nodes[p] for p in node.parents)
        gw = None
        if w.requires_grad:
            gw = np.outer(g, x.value) if g.ndim == 1 else g.T @ x.value
        gx = g @ w.value if x.requires_grad else None
        return gw, gx
    if kind == "mul":
        a, b = (nodes[p] for p in node.parents)
        ga = g * b.value if a.requires_grad else None
        gb = _reduce_to(g * a.value, b.shape) if b.requires_grad else None
        return ga, gb
    if kind == "leaky_relu":
        x = nodes[node.parents[0]].value
        return (np.where(x > 0, g, LEAKY_SLOPE * g),)
    if kind == "reshape":
        return (g.reshape(nodes[node.parents[0]].value.shape),)
    if kind == "sum_squares":
        x = nodes[node.parents[0]].value
        return (2.0 * g[0] * x,)
    if kind == "permute":
        index = node.params["index"]
        out = np.empty_like(g)
        out[..., index] = g
        return (out,)
    raise ContractError(f"no vector-Jacobian product for {kind!r}")


def _compute(kind: str, values, params) -> np.ndarray:
    if kind == "add":
        return values[0] + values[1]
    if kind == "sub":
        return values[0] - values[1]
    if kind == "scale":
        return values[0] * params["factor"]
    if kind == "matvec":
        return values[1] @ values[0].T
    if kind == "mul":
        return values[0] * values[1]
    if kind == "leaky_relu":
        return np.where(values[0] > 0, values[0], LEAKY_SLOPE * values[0])
    if kind == "reshape":
        return values[0].reshape(params["shape"]).copy()
    if kind == "sum_squares":
        flat = values[0].ravel()
        return np.array([np.dot(flat, flat)])
    if kind == "permute":
        return values[0][..., params["index"]]
    raise ContractError(f"unknown op kind {kind!r}")


def replay(graph: Graph, overrides: dict[int, np.ndarray] | None = None, upto: int | None = None) -> list[np.ndarray]:
    """Recompute node values in id order, substituting ``overrides`` for leaves."""
    overrides = overrides or {}
    upto = len(graph.nodes) - 1 if upto is None else upto
    values: list[np.ndarray] = []
    for node in graph.nodes[: upto + 1]:
        if node.kind == "leaf":
            values.append(np.asarray(overrides.get(node.id, node.value), dtype=np.float64))
        else:
            values.append(_compute(node.kind, [values[p] for p in node.parents], node.params))
    return values


def grad_check(graph: Graph, root: int, leaf: int, step: float = 1e-5) -> float:
    """Max relative error of ``backward`` against central differences.

    The graph is replayed with each entry of ``leaf`` nudged by ``+-step``; the
    per-entry error is ``|analytic - numeric| / (|numeric| + 1e-12)``.
    """
    analytic, numeric = gradient_pair(graph, root, leaf, step)
    rel = np.abs(analytic - numeric) / (np.abs(numeric) + 1e-12)
    return float(rel.max(initial=0.0))


def gradient_pair(graph: Graph, root: int, leaf: int, step: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """(analytic, central-difference) gradients of ``root`` w.r.t. ``leaf``."""
    if step <= 0:
        raise ContractError("step must be positive")
    if graph.nodes[leaf].kind != "leaf":
        raise ContractError(f"node {leaf} is not a leaf")
    analytic = backward(graph, root).get(leaf)
    base = graph.nodes[leaf].value
    if analytic is None:
        analytic = np.zeros_like(base)
    numeric = np.zeros(base.size)
    for i in range(base.size):
        plus = base.copy()
        minus = base.copy()
        plus.reshape(-1)[i] += step
        minus.reshape(-1)[i] -= step
        fp = replay(graph, {leaf: plus}, root)[root][0]
        fm = replay(graph, {leaf: minus}, root)[root][0]
        numeric[i] = (fp - fm) / (2.0 * step)
    return analytic, numeric.reshape(base.shape)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
              weight_decay: float = 0.0) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update.

    Returns freshly allocated parameter arrays; the moment buffers in
    ``state`` are updated in place and its step counter advanced.
    ``weight_decay`` adds ``weight_decay * param`` to the gradient.
    """
    if lr <= 0:
        raise ContractError("learning rate must be positive")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state differ in length")
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"adam: parameter {p.shape} vs gradient {g.shape}")
        if weight_decay:
            g = g + weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += eps
        upd = m / denom
        upd *= lr / c1
        new_params.append(_frozen(p - upd))
    return new_params, state
