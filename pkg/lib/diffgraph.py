"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Operations record themselves on the active :class:`Tape` when any input
requires a gradient. ``backward`` walks the tape in reverse recording order,
which is a valid reverse topological order because an operation can only be
recorded after all of its inputs exist.

Outside a ``with Tape():`` block nothing is recorded, so inference code runs
on plain arrays without graph bookkeeping.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not agree."""
    pass


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""
    pass


class TapeError(RuntimeError):
    """Misuse of the tape contract (non-scalar loss, empty tape)."""
    pass


# Vector-Jacobian product: upstream gradient -> one gradient (or None) per input
Vjp = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Dense float64 array with optional gradient tracking.

    Values are read-only once written. Parameters change by rebinding
    ``values`` to a fresh array (see :meth:`assign`), never in place.
    """

    def __init__(self, values, requires_grad: bool = False, name: str = ""):
        arr = np.array(values, dtype=np.float64)
        arr.flags.writeable = False
        self.values = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def item(self) -> float:
        if self.values.size != 1:
            raise TapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.values.reshape(()))

    def assign(self, values: np.ndarray) -> None:
        """Rebind values to a new array of the same shape."""
        arr = np.array(values, dtype=np.float64)
        if arr.shape != self.values.shape:
            raise ShapeError(f"assign: shape {arr.shape} != {self.values.shape}")
        arr.flags.writeable = False
        self.values = arr

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"


@dataclass
class Node:
    """One recorded primitive operation."""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: Vjp


class Tape:
    """Ordered record of operations for one training step.

    Used as a context manager; the tape is cleared on exit so graphs do not
    outlive the step that built them.
    """

    def __init__(self):
        self.nodes: List[Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE.remove(self)
        self.clear()

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        self.nodes = []

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every tracked tensor reachable from ``loss``.

        Leaf gradients accumulate additively into any existing ``grad``;
        intermediate tensors get fresh gradients.
        """
        if loss.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.nodes:
            raise TapeError("backward called on an empty tape")

        produced = {id(node.output) for node in self.nodes}
        pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        leaves: Dict[int, Tensor] = {}

        for node in reversed(self.nodes):
            upstream = pending.pop(id(node.output), None)
            if upstream is None:
                continue
            node.output.grad = upstream
            for tensor, grad in zip(node.inputs, node.vjp(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in pending:
                    pending[key] = pending[key] + grad
                else:
                    pending[key] = grad
                if key not in produced:
                    leaves[key] = tensor

        for key, tensor in leaves.items():
            grad = pending[key]
            tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad


_ACTIVE: List[Tape] = []


def is_recording(*inputs: Tensor) -> bool:
    """True when an op on ``inputs`` would be recorded."""
    return bool(_ACTIVE) and any(t.requires_grad for t in inputs)


def record_op(op: str, inputs: Sequence[Tensor], values: np.ndarray, vjp: Vjp) -> Tensor:
    """Wrap ``values`` as the output of ``op`` and record it when tracking.

    Custom differentiable operations (the CTC loss among them) use this to
    join the graph with their own vector-Jacobian product.
    """
    inputs = tuple(inputs)
    tracked = is_recording(*inputs)
    out = Tensor(values, requires_grad=tracked)
    if tracked:
        _ACTIVE[-1].record(Node(op, inputs, out, vjp))
    return out


def constant(values) -> Tensor:
    return Tensor(values)


def parameter(values, name: str = "") -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


def _check_2d(x: Tensor, op: str) -> None:
    if x.values.ndim != 2:
        raise ShapeError(f"{op}: expected a 2-D tensor, got shape {x.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    _check_2d(a, "matmul")
    _check_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    av, bv = a.values, b.values

    def vjp(g):
        return g @ bv.T, av.T @ g

    return record_op("matmul", (a, b), av @ bv, vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return record_op("add", (a, b), a.values + b.values, lambda g: (g, g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a row vector ``b`` (shape (D,)) to every row of ``x`` (T x D)."""
    _check_2d(x, "add_bias")
    if b.values.ndim != 1 or b.shape[0] != x.shape[1]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match rows of {x.shape}")
    return record_op("add_bias", (x, b), x.values + b.values, lambda g: (g, g.sum(axis=0)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    av, bv = a.values, b.values
    return record_op("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return record_op("scale", (x,), x.values * factor, lambda g: (g * factor,))


def transpose(x: Tensor) -> Tensor:
    _check_2d(x, "transpose")
    return record_op("transpose", (x,), x.values.T, lambda g: (g.T,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.values)
    return record_op("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    active = x.values > 0
    return record_op("relu", (x,), np.where(active, x.values, 0.0), lambda g: (g * active,))


def sum_all(x: Tensor) -> Tensor:
    """Sum of every element, as a 0-d tensor."""
    shape = x.shape
    return record_op("sum", (x,), np.sum(x.values), lambda g: (np.broadcast_to(g, shape).copy(),))


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with row-max subtraction."""
    _check_2d(x, "softmax_rows")
    if not np.all(np.isfinite(x.values)):
        raise NumericError("softmax_rows: input contains non-finite values")
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return record_op("softmax_rows", (x,), y, vjp)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean and unit variance (no affine terms)."""
    _check_2d(x, "layer_norm")
    mu = x.values.mean(axis=1, keepdims=True)
    centered = x.values - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    y = centered * inv_std

    def vjp(g):
        g_mean = g.mean(axis=1, keepdims=True)
        gy_mean = (g * y).mean(axis=1, keepdims=True)
        return (inv_std * (g - g_mean - y * gy_mean),)

    return record_op("layer_norm", (x,), y, vjp)


def add_scalars(terms: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    """Weighted sum of scalar tensors."""
    if len(terms) != len(weights):
        raise ShapeError("add_scalars: terms and weights differ in length")
    for t in terms:
        if t.size != 1:
            raise ShapeError(f"add_scalars: term of shape {t.shape} is not scalar")
    ws = [float(w) for w in weights]
    total = sum(w * float(t.values.reshape(())) for t, w in zip(terms, ws) if w)

    def vjp(g):
        return [np.broadcast_to(g * w, t.shape).copy() for t, w in zip(terms, ws)]

    return record_op("add_scalars", terms, np.float64(total), vjp)
