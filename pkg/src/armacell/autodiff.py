"""Reverse-mode gradient engine over the tensor op set.

Graphs are append-only: parents always precede children, so insertion order
is a topological order. Values and adjoints live on the nodes; a graph can
be re-run on fresh input bindings (one graph per batch shape).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Activation, ShapeError, Tensor, apply_array, conv2d_same_batch, _im2col

__all__ = ["Graph", "Node", "forward", "backward", "grad_check", "GradCheckReport"]


@dataclass
class Node:
    id: int
    op: str
    parents: list[int]
    extra: dict = field(default_factory=dict)
    name: str | None = None
    value: np.ndarray | None = None
    adjoint: np.ndarray | None = None


class GraphError(RuntimeError):
    pass


class Graph:
    """Computation graph builder; node methods return integer node ids."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.param_ids: list[int] = []
        self._ran_forward = False

    def _add(self, op: str, parents: list[int], extra: dict | None = None,
             name: str | None = None) -> int:
        for p in parents:
            if not 0 <= p < len(self.nodes):
                raise GraphError(f"parent id {p} out of range for {op} node")
        node = Node(len(self.nodes), op, list(parents), extra or {}, name)
        self.nodes.append(node)
        return node.id

    # -- leaves ------------------------------------------------------------

    def input(self, name: str | None = None) -> int:
        return self._add("input", [], name=name)

    def constant(self, values) -> int:
        nid = self._add("input", [], name="const")
        self.nodes[nid].value = np.asarray(values, dtype=np.float64)
        return nid

    def parameter(self, values, name: str | None = None) -> int:
        nid = self._add("parameter", [], name=name)
        self.nodes[nid].value = np.array(
            values.array if isinstance(values, Tensor) else values, dtype=np.float64)
        self.param_ids.append(nid)
        return nid

    def set_parameter(self, nid: int, values) -> None:
        node = self.nodes[nid]
        if node.op != "parameter":
            raise GraphError(f"node {nid} is {node.op}, not a parameter")
        node.value = np.array(
            values.array if isinstance(values, Tensor) else values, dtype=np.float64)

    def parameter_value(self, nid: int) -> np.ndarray:
        return self.nodes[nid].value

    # -- ops ---------------------------------------------------------------

    def matmul(self, a: int, b: int) -> int:
        return self._add("matmul", [a, b])

    def conv2d_same(self, x: int, kernel: int) -> int:
        return self._add("conv2d_same", [x, kernel])

    def add(self, a: int, b: int) -> int:
        return self._add("add", [a, b])

    def sub(self, a: int, b: int) -> int:
        return self._add("sub", [a, b])

    def mul(self, a: int, b: int) -> int:
        return self._add("mul", [a, b])

    def apply(self, act: Activation, x: int) -> int:
        return self._add("apply", [x], {"act": act})

    def sum(self, x: int) -> int:
        return self._add("sum", [x])

    def mean(self, x: int) -> int:
        return self._add("mean", [x])

    def square(self, x: int) -> int:
        return self._add("square", [x])

    def log(self, x: int) -> int:
        return self._add("log", [x])

    def clip(self, x: int, lo: float, hi: float) -> int:
        return self._add("clip", [x], {"lo": float(lo), "hi": float(hi)})

    def batch_norm(self, x: int, gamma: int, beta: int, eps: float = 1e-5) -> int:
        # Fused train-mode batch normalization (per trailing channel). The op
        # set has no sqrt, so normalization ships with its own exact VJP.
        return self._add("batch_norm", [x, gamma, beta], {"eps": float(eps)})


def _vector_rhs(a: np.ndarray, b: np.ndarray, nid: int, op: str) -> bool:
    """True when b broadcasts against a (trailing-axis vector or scalar)."""
    if a.shape == b.shape:
        return False
    if b.size == 1:
        return True
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return True
    raise ShapeError(f"node {nid} ({op}): operands not broadcastable: "
                     f"{a.shape} vs {b.shape}")


def _eval_node(node: Node, vals: list[np.ndarray]) -> np.ndarray:
    op = node.op
    if op == "matmul":
        a, b = vals
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"node {node.id} (matmul): shapes {a.shape} x {b.shape}")
        return a @ b
    if op == "conv2d_same":
        x, k = vals
        if x.ndim != 4:
            raise ShapeError(f"node {node.id} (conv2d_same): input rank {x.ndim}, "
                             "expected [N,H,W,C]")
        return conv2d_same_batch(x, k)
    if op in ("add", "sub", "mul"):
        a, b = vals
        _vector_rhs(a, b, node.id, op)
        if op == "add":
            return a + b
        if op == "sub":
            return a - b
        return a * b
    if op == "apply":
        return apply_array(node.extra["act"], vals[0])
    if op == "sum":
        return np.asarray(vals[0].sum())
    if op == "mean":
        return np.asarray(vals[0].mean())
    if op == "square":
        return vals[0] * vals[0]
    if op == "log":
        return np.log(vals[0])
    if op == "clip":
        return np.clip(vals[0], node.extra["lo"], node.extra["hi"])
    if op == "batch_norm":
        x, gamma, beta = vals
        axes = tuple(range(x.ndim - 1))
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + node.extra["eps"])
        xhat = (x - mu) * inv_std
        node.extra["cache"] = (xhat, inv_std)
        node.extra["batch_stats"] = (mu, var)
        return gamma * xhat + beta
    raise GraphError(f"node {node.id}: cannot evaluate op {op!r}")


def forward(graph: Graph, bindings: dict[int, Tensor] | None = None,
            output: int | None = None) -> Tensor:
    """Populate node values in topological order and return the root value."""
    bindings = bindings or {}
    for nid, val in bindings.items():
        node = graph.nodes[nid]
        if node.op != "input":
            raise GraphError(f"binding for node {nid} which is {node.op}, not input")
        node.value = np.asarray(val.array if isinstance(val, Tensor) else val,
                                dtype=np.float64)
    for node in graph.nodes:
        if node.op == "input":
            if node.value is None:
                raise GraphError(f"input node {node.id} ({node.name}) is unbound")
            continue
        if node.op == "parameter":
            if node.value is None:
                raise GraphError(f"parameter node {node.id} ({node.name}) has no value")
            continue
        node.value = _eval_node(node, [graph.nodes[p].value for p in node.parents])
    graph._ran_forward = True
    root = graph.nodes[output if output is not None else -1]
    return Tensor(root.value)


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over the axes a scalar or trailing-axis vector broadcast over."""
    if grad.shape == shape:
        return grad
    if int(np.prod(shape)) == 1:
        return np.asarray(grad.sum()).reshape(shape)
    return grad.reshape(-1, shape[0]).sum(axis=0)


def _conv_backward(x: np.ndarray, k: np.ndarray, g: np.ndarray):
    k1, k2, c_in, c_out = k.shape
    # grad wrt kernel: patches^T @ g
    cols = _im2col(x, k1, k2).reshape(-1, k1 * k2 * c_in)
    dk = (cols.T @ g.reshape(-1, c_out)).reshape(k.shape)
    # grad wrt input: correlate g with the 180deg-rotated, channel-swapped kernel
    k_back = k[::-1, ::-1].transpose(0, 1, 3, 2)
    dx = conv2d_same_batch(g, np.ascontiguousarray(k_back))
    return dx, dk


def backward(graph: Graph, loss: int) -> dict[int, Tensor]:
    """Accumulate adjoints from a scalar loss; returns parameter gradients."""
    if not graph._ran_forward:
        raise GraphError("backward called before forward")
    loss_node = graph.nodes[loss]
    if loss_node.value is None or loss_node.value.size != 1:
        raise GraphError(f"loss node {loss} is not scalar "
                         f"(shape {None if loss_node.value is None else loss_node.value.shape})")
    for node in graph.nodes:
        node.adjoint = None
    loss_node.adjoint = np.ones_like(loss_node.value)

    def acc(nid: int, g: np.ndarray) -> None:
        node = graph.nodes[nid]
        node.adjoint = g if node.adjoint is None else node.adjoint + g

    for node in reversed(graph.nodes[: loss + 1]):
        if node.adjoint is None or node.op in ("input", "parameter"):
            continue
        g = node.adjoint
        ps = node.parents
        vals = [graph.nodes[p].value for p in ps]
        op = node.op
        if op == "matmul":
            a, b = vals
            acc(ps[0], g @ b.T)
            acc(ps[1], a.T @ g)
        elif op == "conv2d_same":
            dx, dk = _conv_backward(vals[0], vals[1], g)
            acc(ps[0], dx)
            acc(ps[1], dk)
        elif op == "add":
            acc(ps[0], g)
            acc(ps[1], _reduce_to(g, vals[1].shape))
        elif op == "sub":
            acc(ps[0], g)
            acc(ps[1], -_reduce_to(g, vals[1].shape))
        elif op == "mul":
            a, b = vals
            acc(ps[0], g * b)
            acc(ps[1], _reduce_to(g * a, b.shape))
        elif op == "apply":
            act = node.extra["act"]
            x = vals[0]
            y = node.value
            if act is Activation.LINEAR:
                acc(ps[0], g)
            elif act is Activation.RELU:
                acc(ps[0], g * (x > 0.0))
            elif act is Activation.SIGMOID:
                acc(ps[0], g * y * (1.0 - y))
            elif act is Activation.TANH:
                acc(ps[0], g * (1.0 - y * y))
        elif op == "sum":
            acc(ps[0], np.broadcast_to(g, vals[0].shape).copy())
        elif op == "mean":
            acc(ps[0], np.broadcast_to(g / vals[0].size, vals[0].shape).copy())
        elif op == "square":
            acc(ps[0], 2.0 * vals[0] * g)
        elif op == "log":
            acc(ps[0], g / vals[0])
        elif op == "clip":
            x = vals[0]
            mask = (x > node.extra["lo"]) & (x < node.extra["hi"])
            acc(ps[0], g * mask)
        elif op == "batch_norm":
            x, gamma, _ = vals
            xhat, inv_std = node.extra["cache"]
            axes = tuple(range(x.ndim - 1))
            m = x.size // x.shape[-1]
            dxhat = g * gamma
            acc(ps[1], (g * xhat).sum(axis=axes))
            acc(ps[2], g.sum(axis=axes))
            dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes)
                                  - xhat * (dxhat * xhat).sum(axis=axes))
            acc(ps[0], dx)
        else:
            raise GraphError(f"node {node.id}: cannot differentiate op {op!r}")

    grads: dict[int, Tensor] = {}
    for pid in graph.param_ids:
        node = graph.nodes[pid]
        adj = node.adjoint
        grads[pid] = Tensor(np.zeros_like(node.value) if adj is None else adj)
    return grads


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    failures: list[tuple[str, int, float, float, float]]


def grad_check(build_fn, params: list[Tensor], eps: float, tol: float) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    ``build_fn(params)`` must return ``(graph, param_ids, loss_id)``. The
    relative error per coordinate uses a ``max(1, |analytic|)`` denominator.
    """
    if not 0.0 < eps <= 1e-3:
        raise ValueError(f"eps must lie in (0, 1e-3], got {eps}")
    graph, param_ids, loss_id = build_fn(params)
    forward(graph, output=loss_id)
    grads = backward(graph, loss_id)

    max_rel = 0.0
    failures: list[tuple[str, int, float, float, float]] = []
    for idx, pid in enumerate(param_ids):
        base = graph.parameter_value(pid).copy()
        analytic = grads[pid].array.reshape(-1)
        flat = base.reshape(-1)
        name = graph.nodes[pid].name or f"param{idx}"
        for c in range(flat.size):
            for sign in (+1.0, -1.0):
                perturbed = base.copy()
                perturbed.reshape(-1)[c] = flat[c] + sign * eps
                graph.set_parameter(pid, perturbed)
                val = forward(graph, output=loss_id).item()
                if sign > 0:
                    f_plus = val
                else:
                    f_minus = val
            graph.set_parameter(pid, base)
            numeric = (f_plus - f_minus) / (2.0 * eps)
            rel = abs(analytic[c] - numeric) / max(1.0, abs(analytic[c]))
            max_rel = max(max_rel, rel)
            if rel > tol:
                failures.append((name, c, float(analytic[c]), float(numeric), float(rel)))
    forward(graph, output=loss_id)  # restore values at the unperturbed point
    return GradCheckReport(max_rel_err=max_rel, passed=not failures, failures=failures)
