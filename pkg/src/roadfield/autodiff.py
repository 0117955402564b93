"""Minimal reverse-mode automatic differentiation on numpy arrays.

A Tensor records the op that produced it plus its parents; calling
``backward()`` on a scalar loss walks the recorded graph in reverse
topological order and accumulates gradients into every Tensor created
with ``requires_grad=True``.

The op set is deliberately small: exactly what the field evaluation,
volume compositing and loss assembly need. Everything is vectorized;
gradients of gather-style ops scatter with ``np.bincount`` so large
parameter tables stay cheap to update.

The module-level helpers (``exp``, ``softplus``, ...) dispatch on input
type, so numeric code written against them runs both on plain ndarrays
(inference) and on Tensors (training) without duplication.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    # -- graph bookkeeping -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def backward(self, grad: np.ndarray | None = None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without gradient requires a scalar")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.asarray(grad, dtype=np.float64).reshape(self.data.shape)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def _accumulate(self, grad: np.ndarray):
        # never mutated in place, so aliasing the incoming array is safe
        self.grad = grad if self.grad is None else self.grad + grad

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data + other.data, parents=(self, other))

            def bwd(g):
                self._accumulate(_unbroadcast(g, self.data.shape))
                other._accumulate(_unbroadcast(g, other.data.shape))

        else:
            out = Tensor(self.data + other, parents=(self,))

            def bwd(g):
                self._accumulate(_unbroadcast(g, self.data.shape))

        out._backward = bwd if out.requires_grad else None
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-other if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data * other.data, parents=(self, other))

            def bwd(g):
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        else:
            const = np.asarray(other, dtype=np.float64)
            out = Tensor(self.data * const, parents=(self,))

            def bwd(g):
                self._accumulate(_unbroadcast(g * const, self.data.shape))

        out._backward = bwd if out.requires_grad else None
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data / other.data, parents=(self, other))

            def bwd(g):
                self._accumulate(_unbroadcast(g / other.data, self.data.shape))
                other._accumulate(
                    _unbroadcast(-g * self.data / (other.data * other.data),
                                 other.data.shape)
                )

            out._backward = bwd if out.requires_grad else None
            return out
        return self * (1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        assert isinstance(other, Tensor)
        out = Tensor(self.data @ other.data, parents=(self, other))

        def bwd(g):
            self._accumulate(g @ other.data.T)
            other._accumulate(self.data.T @ g)

        out._backward = bwd if out.requires_grad else None
        return out

    def __getitem__(self, key):
        out = Tensor(self.data[key], parents=(self,))

        def bwd(g):
            full = np.zeros_like(self.data)
            full[key] = g
            self._accumulate(full)

        out._backward = bwd if out.requires_grad else None
        return out

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g.reshape(self.data.shape))
        return out

    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,))

        def bwd(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.data.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape).copy())

        out._backward = bwd if out.requires_grad else None
        return out

    def cumsum(self, axis: int = -1):
        out = Tensor(np.cumsum(self.data, axis=axis), parents=(self,))

        def bwd(g):
            flipped = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
            self._accumulate(flipped)

        out._backward = bwd if out.requires_grad else None
        return out

    # -- nonlinearities -----------------------------------------------------

    def exp(self):
        y = np.exp(self.data)
        out = Tensor(y, parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * y)
        return out

    def sin(self):
        out = Tensor(np.sin(self.data), parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * np.cos(self.data))
        return out

    def cos(self):
        out = Tensor(np.cos(self.data), parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * -np.sin(self.data))
        return out

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * (self.data > 0.0))
        return out

    def softplus(self):
        # log1p(exp(x)) with the standard overflow-safe split
        x = self.data
        y = np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))
        out = Tensor(y, parents=(self,))
        if out.requires_grad:
            sig = _sigmoid_stable(x)
            out._backward = lambda g: self._accumulate(g * sig)
        return out

    def sigmoid(self):
        y = _sigmoid_stable(self.data)
        out = Tensor(y, parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * y * (1.0 - y))
        return out


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis), parents=tuple(tensors))

    def bwd(g):
        sizes = [d.shape[axis] for d in datas]
        splits = np.cumsum(sizes)[:-1]
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    out._backward = bwd if out.requires_grad else None
    return out


def take_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather table[idx] with scatter-add backward."""
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(table.data[idx], parents=(table,))

    def bwd(g):
        acc = np.zeros_like(table.data)
        n_rows = table.data.shape[0]
        flat_g = g.reshape(idx.size, -1)
        flat_i = idx.reshape(-1)
        for col in range(acc.shape[1]):
            acc[:, col] = np.bincount(flat_i, weights=flat_g[:, col], minlength=n_rows)
        table._accumulate(acc)

    out._backward = bwd if out.requires_grad else None
    return out


def indexed_weighted_sum(table: Tensor, idx: np.ndarray, w: np.ndarray) -> Tensor:
    """out[n] = sum_c w[n, c] * table[idx[n, c]].

    `table` is (M, F); `idx` and `w` are (N, C) and constant. This is the
    interpolation primitive for feature grids: C corners per query, eight
    for trilinear. Backward scatters via bincount per feature column.
    """
    idx = np.asarray(idx, dtype=np.intp)
    w = np.asarray(w, dtype=np.float64)
    gathered = table.data[idx]  # (N, C, F)
    out = Tensor(np.einsum("ncf,nc->nf", gathered, w), parents=(table,))

    def bwd(g):
        # contribution of each (n, c) corner: w[n, c] * g[n, :]
        contrib = w[:, :, None] * g[:, None, :]  # (N, C, F)
        flat_i = idx.reshape(-1)
        flat_c = contrib.reshape(-1, contrib.shape[-1])
        acc = np.zeros_like(table.data)
        n_rows = table.data.shape[0]
        for col in range(acc.shape[1]):
            acc[:, col] = np.bincount(flat_i, weights=flat_c[:, col], minlength=n_rows)
        table._accumulate(acc)

    out._backward = bwd if out.requires_grad else None
    return out


# -- dual-mode helpers: work on Tensors and on plain ndarrays ----------------

def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def value(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def exp(x):
    return x.exp() if isinstance(x, Tensor) else np.exp(x)


def sin(x):
    return x.sin() if isinstance(x, Tensor) else np.sin(x)


def cos(x):
    return x.cos() if isinstance(x, Tensor) else np.cos(x)


def relu(x):
    return x.relu() if isinstance(x, Tensor) else np.maximum(x, 0.0)


def softplus(x):
    if isinstance(x, Tensor):
        return x.softplus()
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


def sigmoid(x):
    if isinstance(x, Tensor):
        return x.sigmoid()
    return _sigmoid_stable(np.asarray(x, dtype=np.float64))


def cumsum(x, axis: int = -1):
    return x.cumsum(axis) if isinstance(x, Tensor) else np.cumsum(x, axis=axis)


def sum_(x, axis=None, keepdims: bool = False):
    if isinstance(x, Tensor):
        return x.sum(axis=axis, keepdims=keepdims)
    return np.sum(x, axis=axis, keepdims=keepdims)


def reshape(x, shape):
    return x.reshape(shape) if isinstance(x, Tensor) else np.reshape(x, shape)
