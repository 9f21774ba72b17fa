"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

The engine keeps a dynamic graph: every operation records its parent tensors
and a closure that routes the output gradient back to them.  Only the
operations the aligner networks actually use are provided.  Broadcasting is
deliberately restricted to the matrix-plus-row-vector case; everything else
must match shapes exactly, and mismatches raise :class:`ShapeMismatch` naming
the offending shapes.

All arithmetic is float64.  Graphs are built only along paths that lead to a
tensor with ``requires_grad=True``; pure-constant subexpressions collapse to
plain values, so inference and frozen-parameter phases pay no graph cost.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    """Operands disagree on shape for the requested operation."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A dense float64 array plus reverse-mode bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != ():
            raise ShapeMismatch(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, leaves: Iterable["Tensor"] | None = None) -> None:
        """Backpropagate from this scalar through the recorded graph.

        Gradients accumulate into ``.grad`` of every tensor on a path to this
        one.  If ``leaves`` is given, any listed tensor left untouched by the
        graph gets an explicit zero gradient, so optimizers can treat the
        whole parameter set uniformly.
        """
        if self.data.shape != ():
            raise ShapeMismatch(f"backward needs a scalar loss, got shape {self.data.shape}")
        order = _topo_order(self)
        self.grad = np.ones(())
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        if leaves is not None:
            for leaf in leaves:
                if leaf.grad is None:
                    leaf.grad = np.zeros_like(leaf.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS; recursion would overflow on long LSTM chains.
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


_GRAD_ENABLED = True


class no_grad:
    """Context manager that suspends graph recording (inference fast path)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum; also accepts matrix + row vector, or tensor + scalar."""
    if isinstance(b, (int, float)):
        a = _wrap(a)
        def back_scalar(g, a=a):
            a._accumulate(g)
        return _make(a.data + b, (a,), back_scalar)
    a, b = _wrap(a), _wrap(b)
    if a.data.shape == b.data.shape:
        def back_same(g, a=a, b=b):
            a._accumulate(g)
            b._accumulate(g)
        return _make(a.data + b.data, (a, b), back_same)
    if a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        def back_row(g, a=a, b=b):
            a._accumulate(g)
            b._accumulate(g.sum(axis=0))
        return _make(a.data + b.data, (a, b), back_row)
    raise ShapeMismatch(f"add: incompatible shapes {a.data.shape} and {b.data.shape}")


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return add(a, -b)
    return add(a, neg(b))


def neg(a: Tensor) -> Tensor:
    a = _wrap(a)
    def back(g, a=a):
        a._accumulate(-g)
    return _make(-a.data, (a,), back)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product of equal shapes, or tensor times python scalar."""
    if isinstance(b, (int, float)):
        a = _wrap(a)
        def back_scalar(g, a=a, b=b):
            a._accumulate(g * b)
        return _make(a.data * b, (a,), back_scalar)
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"mul: incompatible shapes {a.data.shape} and {b.data.shape}")
    def back(g, a=a, b=b):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)
    return _make(a.data * b.data, (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: (m,k)@(k,n), (m,k)@(k,) or (k,)@(k,n)."""
    a, b = _wrap(a), _wrap(b)
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2 and ad.shape[1] == bd.shape[0]:
        def back_mm(g, a=a, b=b):
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)
        return _make(ad @ bd, (a, b), back_mm)
    if ad.ndim == 2 and bd.ndim == 1 and ad.shape[1] == bd.shape[0]:
        def back_mv(g, a=a, b=b):
            a._accumulate(np.outer(g, b.data))
            b._accumulate(a.data.T @ g)
        return _make(ad @ bd, (a, b), back_mv)
    if ad.ndim == 1 and bd.ndim == 2 and ad.shape[0] == bd.shape[0]:
        def back_vm(g, a=a, b=b):
            a._accumulate(b.data @ g)
            b._accumulate(np.outer(a.data, g))
        return _make(ad @ bd, (a, b), back_vm)
    raise ShapeMismatch(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")


# ---------------------------------------------------------------------------
# nonlinearities


def relu(x: Tensor) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0.0  # derivative at exactly 0 is taken as 0
    def back(g, x=x, mask=mask):
        x._accumulate(g * mask)
    return _make(np.maximum(x.data, 0.0), (x,), back)


def maximum_scalar(x: Tensor, c: float) -> Tensor:
    """Elementwise max(x, c) for a python constant c."""
    x = _wrap(x)
    mask = x.data > c
    def back(g, x=x, mask=mask):
        x._accumulate(g * mask)
    return _make(np.maximum(x.data, c), (x,), back)


def tanh(x: Tensor) -> Tensor:
    x = _wrap(x)
    y = np.tanh(x.data)
    def back(g, x=x, y=y):
        x._accumulate(g * (1.0 - y * y))
    return _make(y, (x,), back)


def sigmoid(x: Tensor) -> Tensor:
    x = _wrap(x)
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    def back(g, x=x, y=y):
        x._accumulate(g * y * (1.0 - y))
    return _make(y, (x,), back)


def softmax(x: Tensor) -> Tensor:
    """Softmax of a 1-D score vector."""
    x = _wrap(x)
    if x.data.ndim != 1:
        raise ShapeMismatch(f"softmax expects a 1-D vector, got shape {x.data.shape}")
    z = x.data - x.data.max()
    e = np.exp(z)
    y = e / e.sum()
    def back(g, x=x, y=y):
        x._accumulate(y * (g - np.dot(g, y)))
    return _make(y, (x,), back)


def log_softmax(x: Tensor) -> Tensor:
    """Numerically stable log-softmax of a 1-D score vector."""
    x = _wrap(x)
    if x.data.ndim != 1:
        raise ShapeMismatch(f"log_softmax expects a 1-D vector, got shape {x.data.shape}")
    z = x.data - x.data.max()
    lse = np.log(np.exp(z).sum())
    y = z - lse
    sm = np.exp(y)
    def back(g, x=x, sm=sm):
        x._accumulate(g - sm * g.sum())
    return _make(y, (x,), back)


# ---------------------------------------------------------------------------
# shape ops


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D vectors."""
    parts = [_wrap(p) for p in parts]
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeMismatch(f"concat expects 1-D vectors, got shape {p.data.shape}")
    sizes = [p.data.shape[0] for p in parts]
    def back(g, parts=parts, sizes=sizes):
        off = 0
        for p, n in zip(parts, sizes):
            p._accumulate(g[off:off + n])
            off += n
    return _make(np.concatenate([p.data for p in parts]), tuple(parts), back)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack equally sized 1-D vectors into a matrix, one per row."""
    rows = [_wrap(r) for r in rows]
    n = rows[0].data.shape
    for r in rows:
        if r.data.ndim != 1 or r.data.shape != n:
            raise ShapeMismatch(f"stack_rows expects matching 1-D vectors, got {r.data.shape} vs {n}")
    def back(g, rows=rows):
        for i, r in enumerate(rows):
            r._accumulate(g[i])
    return _make(np.stack([r.data for r in rows]), tuple(rows), back)


def mean_rows(x: Tensor) -> Tensor:
    """Mean over the row axis of a matrix: (m,n) -> (n,)."""
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ShapeMismatch(f"mean_rows expects a matrix, got shape {x.data.shape}")
    m = x.data.shape[0]
    def back(g, x=x, m=m):
        x._accumulate(np.tile(g / m, (m, 1)))
    return _make(x.data.mean(axis=0), (x,), back)


def sum_all(x: Tensor) -> Tensor:
    x = _wrap(x)
    def back(g, x=x):
        x._accumulate(np.full_like(x.data, float(g)))
    return _make(np.asarray(x.data.sum()), (x,), back)


def sum_squares(x: Tensor) -> Tensor:
    """Squared L2 norm of all entries."""
    x = _wrap(x)
    def back(g, x=x):
        x._accumulate(2.0 * x.data * float(g))
    return _make(np.asarray((x.data * x.data).sum()), (x,), back)


def pick(x: Tensor, i: int) -> Tensor:
    """Select one entry of a 1-D vector as a scalar."""
    x = _wrap(x)
    if x.data.ndim != 1:
        raise ShapeMismatch(f"pick expects a 1-D vector, got shape {x.data.shape}")
    def back(g, x=x, i=i):
        gx = np.zeros_like(x.data)
        gx[i] = float(g)
        x._accumulate(gx)
    return _make(np.asarray(x.data[i]), (x,), back)


def take_row(m: Tensor, i: int) -> Tensor:
    """Select row i of a matrix (used for embedding lookup)."""
    m = _wrap(m)
    if m.data.ndim != 2:
        raise ShapeMismatch(f"take_row expects a matrix, got shape {m.data.shape}")
    def back(g, m=m, i=i):
        gm = np.zeros_like(m.data)
        gm[i] = g
        m._accumulate(gm)
    return _make(m.data[i].copy(), (m,), back)


def gather(x: Tensor, idx: Sequence[int]) -> Tensor:
    """Select entries of a 1-D vector, keeping order."""
    x = _wrap(x)
    if x.data.ndim != 1:
        raise ShapeMismatch(f"gather expects a 1-D vector, got shape {x.data.shape}")
    idx = np.asarray(idx, dtype=int)
    def back(g, x=x, idx=idx):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        x._accumulate(gx)
    return _make(x.data[idx].copy(), (x,), back)


def take_rows(m: Tensor, idx: Sequence[int]) -> Tensor:
    """Select rows of a matrix, keeping order; repeats allowed."""
    m = _wrap(m)
    if m.data.ndim != 2:
        raise ShapeMismatch(f"take_rows expects a matrix, got shape {m.data.shape}")
    idx = np.asarray(idx, dtype=int)
    def back(g, m=m, idx=idx):
        gm = np.zeros_like(m.data)
        np.add.at(gm, idx, g)
        m._accumulate(gm)
    return _make(m.data[idx].copy(), (m,), back)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate matrices with equal column counts along the row axis."""
    parts = [_wrap(p) for p in parts]
    cols = parts[0].data.shape[1] if parts[0].data.ndim == 2 else -1
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[1] != cols:
            raise ShapeMismatch("concat_rows expects matrices with matching column counts, got "
                                + ", ".join(str(q.data.shape) for q in parts))
    sizes = [p.data.shape[0] for p in parts]
    def back(g, parts=parts, sizes=sizes):
        off = 0
        for p, n in zip(parts, sizes):
            p._accumulate(g[off:off + n])
            off += n
    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), back)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate matrices with equal row counts along the column axis."""
    parts = [_wrap(p) for p in parts]
    rows = parts[0].data.shape[0] if parts[0].data.ndim == 2 else -1
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != rows:
            raise ShapeMismatch("concat_cols expects matrices with matching row counts, got "
                                + ", ".join(str(q.data.shape) for q in parts))
    sizes = [p.data.shape[1] for p in parts]
    def back(g, parts=parts, sizes=sizes):
        off = 0
        for p, n in zip(parts, sizes):
            p._accumulate(g[:, off:off + n])
            off += n
    return _make(np.concatenate([p.data for p in parts], axis=1), tuple(parts), back)


# ---------------------------------------------------------------------------
# numerical gradient checking


def finite_difference(f: Callable[[], float], x: np.ndarray, idx: tuple, step: float = 1e-5) -> float:
    """Central difference of f with respect to x[idx], mutating x in place."""
    orig = x[idx]
    x[idx] = orig + step
    hi = f()
    x[idx] = orig - step
    lo = f()
    x[idx] = orig
    return (hi - lo) / (2.0 * step)


def gradient_check(build_loss: Callable[[], Tensor], params: Sequence[Tensor],
                   rng: np.random.Generator, n_coords: int | None = None,
                   step: float = 1e-5, floor: float = 1e-4) -> float:
    """Compare analytic gradients of a scalar loss against central differences.

    ``build_loss`` must rebuild the loss graph from the current parameter
    values on every call.  Returns the maximum relative error over the checked
    coordinates, where the denominator is floored at ``floor`` so that tiny
    gradients are compared absolutely rather than amplifying rounding noise.
    If ``n_coords`` is given, that many coordinates are sampled per parameter;
    otherwise every coordinate is checked.
    """
    loss = build_loss()
    for p in params:
        p.zero_grad()
    loss.backward(leaves=params)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        total = flat.shape[0]
        if n_coords is None or n_coords >= total:
            coords = np.arange(total)
        else:
            coords = rng.choice(total, size=n_coords, replace=False)
        for c in coords:
            num = finite_difference(lambda: build_loss().item(), flat, (int(c),), step)
            ana = ga.reshape(-1)[int(c)]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
    return worst
