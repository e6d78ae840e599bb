"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for the composition heads and loss functions: each op
builds a node holding its value and vector-Jacobian rules; :func:`backward`
walks the graph once and returns cotangents keyed by node identity, so no
mutable ``.grad`` state survives between calls.
"""

from __future__ import annotations

import numpy as np

from .errors import ZeroNormError


class Tensor:
    """A value plus the recipe for pulling gradients back to its parents."""

    __slots__ = ("value", "parents", "needs_grad")

    def __init__(self, value, parents=(), needs_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        # parents: tuple of (Tensor, vjp) where vjp(g) -> cotangent for that parent
        self.parents = parents
        self.needs_grad = needs_grad or any(p.needs_grad for p, _ in parents)

    @property
    def shape(self):
        return self.value.shape


def leaf(value, needs_grad: bool = False) -> Tensor:
    return Tensor(value, needs_grad=needs_grad)


def const(value) -> Tensor:
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverses numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(
        a.value + b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(
        a.value - b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(-g, b.value.shape)),
        ),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(
        a.value * b.value,
        parents=(
            (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
        ),
    )


def scale(a: Tensor, k: float) -> Tensor:
    return Tensor(a.value * k, parents=((a, lambda g: g * k),))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(
        a.value @ b.value,
        parents=(
            (a, lambda g: g @ b.value.T),
            (b, lambda g: a.value.T @ g),
        ),
    )


def transpose(a: Tensor) -> Tensor:
    return Tensor(a.value.T, parents=((a, lambda g: g.T),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return Tensor(y, parents=((a, lambda g: g * (1.0 - y * y)),))


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0.0
    return Tensor(np.where(mask, a.value, 0.0), parents=((a, lambda g: g * mask),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)
    return Tensor(y, parents=((a, lambda g: g * y),))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.value), parents=((a, lambda g: g / a.value),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed stably for large |x|."""
    x = a.value
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = 1.0 / (1.0 + np.exp(-x))
    return Tensor(y, parents=((a, lambda g: g * sig),))


def clip_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); gradient passes only where a > floor."""
    mask = a.value > floor
    return Tensor(np.where(mask, a.value, floor), parents=((a, lambda g: g * mask),))


def total(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    return Tensor(
        np.asarray(a.value.sum()),
        parents=((a, lambda g: np.broadcast_to(g, a.value.shape).copy()),),
    )


def row_sum(a: Tensor) -> Tensor:
    """Sum over axis 1 of a 2-D tensor; output shape (rows,)."""
    return Tensor(
        a.value.sum(axis=1),
        parents=((a, lambda g: np.repeat(g[:, None], a.value.shape[1], axis=1)),),
    )


def concat_cols(parts: list[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along axis 1."""
    widths = [p.value.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)
    parent_rules = tuple(
        (p, (lambda lo, hi: lambda g: g[:, lo:hi])(offsets[i], offsets[i + 1]))
        for i, p in enumerate(parts)
    )
    return Tensor(np.concatenate([p.value for p in parts], axis=1), parents=parent_rules)


def broadcast_row(v: Tensor, rows: int) -> Tensor:
    """Tile a (d,) vector into a (rows, d) matrix; gradient sums over rows."""
    return Tensor(
        np.broadcast_to(v.value, (rows, v.value.shape[0])).copy(),
        parents=((v, lambda g: g.sum(axis=0)),),
    )


def normalize_rows(a: Tensor) -> Tensor:
    """Scale each row of a 2-D tensor to unit L2 norm; zero rows are an error."""
    norms = np.sqrt(np.einsum("ij,ij->i", a.value, a.value))
    if np.any(norms == 0.0):
        raise ZeroNormError(f"zero-norm feature at row {int(np.argmin(norms))}")
    y = a.value / norms[:, None]

    def vjp(g):
        return (g - y * np.einsum("ij,ij->i", g, y)[:, None]) / norms[:, None]

    return Tensor(y, parents=((a, vjp),))


def log_softmax_rows(a: Tensor) -> Tensor:
    """Row-wise log-softmax, stabilized by per-row max subtraction."""
    z = a.value - a.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def vjp(g):
        return g - p * g.sum(axis=1, keepdims=True)

    return Tensor(y, parents=((a, vjp),))


def backward(root: Tensor) -> dict[int, np.ndarray]:
    """Return cotangents for every node reachable from `root` (a scalar)."""
    if root.value.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.value.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(parent) not in seen and parent.needs_grad:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in node.parents:
            if not parent.needs_grad:
                continue
            contrib = vjp(g)
            acc = grads.get(id(parent))
            grads[id(parent)] = contrib if acc is None else acc + contrib
    return grads
