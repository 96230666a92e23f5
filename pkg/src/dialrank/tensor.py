"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array and remembers how it was produced; calling
``backward()`` on a scalar walks the recorded graph once and accumulates
gradients into every tensor that requires them. Graphs are small (one
history-response pair at a time), so no recomputation or checkpointing is
done. Two fused primitives exist for speed and stability: ``log_softmax``
and ``lstm_cell``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

_DTYPE = np.float64

_DTYPES = {"float64": np.float64, "float32": np.float32}


def set_default_dtype(name: str) -> None:
    """Select the float width for newly created tensors (training knob)."""
    if name not in _DTYPES:
        raise ValueError(f"unknown dtype {name!r}; expected one of {sorted(_DTYPES)}")
    global _DTYPE
    _DTYPE = _DTYPES[name]


def default_dtype() -> type:
    return _DTYPE


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), backward=None):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={'set' if self.grad is not None else 'none'})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        other = as_tensor(other)
        return mul(self, power(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def backward(self) -> None:
        """Accumulate gradients of this scalar with respect to the graph."""
        if self.data.size != 1:
            raise ValueError("backward() is defined for scalar outputs only")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative DFS: long LSTM chains overflow Python's recursion limit.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        # Copy so the stored gradient owns its buffer; later accumulations
        # can then add in place.
        t.grad = np.array(g, dtype=_DTYPE)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# -- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    req = a.requires_grad or b.requires_grad

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return Tensor(a.data + b.data, req, (a, b), backward if req else None)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, -g)

    return Tensor(-a.data, a.requires_grad, (a,), backward if a.requires_grad else None)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    req = a.requires_grad or b.requires_grad

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return Tensor(a.data * b.data, req, (a, b), backward if req else None)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data**exponent

    def backward(g):
        _accum(a, g * exponent * a.data ** (exponent - 1.0))

    return Tensor(out, a.requires_grad, (a,), backward if a.requires_grad else None)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        _accum(a, g * out)

    return Tensor(out, a.requires_grad, (a,), backward if a.requires_grad else None)


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, g / a.data)

    return Tensor(np.log(a.data), a.requires_grad, (a,), backward if a.requires_grad else None)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - out * out))

    return Tensor(out, a.requires_grad, (a,), backward if a.requires_grad else None)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: saturates cleanly in both tails, no overflow possible.
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)

    def backward(g):
        _accum(a, g * out * (1.0 - out))

    return Tensor(out, a.requires_grad, (a,), backward if a.requires_grad else None)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return Tensor(a.data * mask, a.requires_grad, (a,), backward if a.requires_grad else None)


# -- reductions ----------------------------------------------------------


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape).astype(_DTYPE, copy=True))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(ge, a.shape).astype(_DTYPE, copy=True))

    return Tensor(out, a.requires_grad, (a,), backward if a.requires_grad else None)


def tmean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- shape / structure ----------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data
    req = a.requires_grad or b.requires_grad

    def backward(g):
        if a.ndim == 1 and b.ndim == 2:  # (n,) @ (n,m) -> (m,)
            if a.requires_grad:
                _accum(a, b.data @ g)
            if b.requires_grad:
                _accum(b, np.outer(a.data, g))
        elif a.ndim == 2 and b.ndim == 1:  # (m,n) @ (n,) -> (m,)
            if a.requires_grad:
                _accum(a, np.outer(g, b.data))
            if b.requires_grad:
                _accum(b, a.data.T @ g)
        elif a.ndim == 1 and b.ndim == 1:  # dot -> scalar
            if a.requires_grad:
                _accum(a, g * b.data)
            if b.requires_grad:
                _accum(b, g * a.data)
        else:  # (m,n) @ (n,p)
            if a.requires_grad:
                _accum(a, g @ b.data.T)
            if b.requires_grad:
                _accum(b, a.data.T @ g)

    return Tensor(out, req, (a, b), backward if req else None)


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, g.T)

    return Tensor(a.data.T, a.requires_grad, (a,), backward if a.requires_grad else None)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]
    fancy = isinstance(idx, np.ndarray) or (
        isinstance(idx, tuple) and any(isinstance(i, np.ndarray) for i in idx)
    )

    def backward(g):
        # a.grad is always an owned buffer (first store allocates), so the
        # scatter can write into it directly.
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        if fancy:
            np.add.at(a.grad, idx, g)
        else:
            a.grad[idx] += g

    return Tensor(out, a.requires_grad, (a,), backward if a.requires_grad else None)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat of an empty sequence")
    out = np.concatenate([p.data for p in parts], axis=axis)
    req = any(p.requires_grad for p in parts)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(p, g[tuple(sl)])

    return Tensor(out, req, tuple(parts), backward if req else None)


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors into a matrix, one per row."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("stack of an empty sequence")
    out = np.stack([p.data for p in parts])
    req = any(p.requires_grad for p in parts)

    def backward(g):
        for i, p in enumerate(parts):
            _accum(p, g[i])

    return Tensor(out, req, tuple(parts), backward if req else None)


# -- fused kernels ---------------------------------------------------------


def log_softmax(a, axis: int = -1) -> Tensor:
    """Log-probabilities along ``axis``, computed with max-subtraction."""
    a = as_tensor(a)
    if a.data.size == 0 or a.shape[axis] == 0:
        raise ValueError("log_softmax of an empty vector")
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        soft = np.exp(out)
        _accum(a, g - soft * g.sum(axis=axis, keepdims=True))

    return Tensor(out, a.requires_grad, (a,), backward if a.requires_grad else None)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accum(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor(out, a.requires_grad, (a,), backward if a.requires_grad else None)


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of an embedding table; gradient scatter-adds back."""
    ids = np.asarray(ids, dtype=np.intp)
    out = table.data[ids]

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    return Tensor(out, table.requires_grad, (table,), backward if table.requires_grad else None)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step; returns (h_next, c_next). Gate order is [i, f, o, g]
    so the three sigmoid gates evaluate in a single call; the forget block
    stays at [hid, 2*hid).

    Fused with a hand-written backward: the cell dominates node counts in
    every model here, and collapsing ~15 primitive nodes per step into one
    keeps training and finite-difference checks inside their time budgets.
    """
    hid = h.shape[-1]
    z = x.data @ wx.data + h.data @ wh.data + b.data
    gates = _sigmoid(z[: 3 * hid])
    gi = gates[:hid]
    gf = gates[hid : 2 * hid]
    go = gates[2 * hid :]
    gg = np.tanh(z[3 * hid :])
    c_next = gf * c.data + gi * gg
    tc = np.tanh(c_next)
    h_next = go * tc
    req = any(t.requires_grad for t in (x, h, c, wx, wh, b))

    pair = Tensor(np.stack([h_next, c_next]), req)

    def backward(g):
        dh, dcin = g[0], g[1]
        dc = dcin + dh * go * (1.0 - tc * tc)
        dz = np.empty_like(z)
        dz[:hid] = (dc * gg) * gi * (1.0 - gi)
        dz[hid : 2 * hid] = (dc * c.data) * gf * (1.0 - gf)
        dz[2 * hid : 3 * hid] = (dh * tc) * go * (1.0 - go)
        dz[3 * hid :] = (dc * gi) * (1.0 - gg * gg)
        _accum(x, wx.data @ dz)
        _accum(h, wh.data @ dz)
        _accum(c, dc * gf)
        if wx.requires_grad:
            _accum(wx, x.data[:, None] * dz[None, :])
        if wh.requires_grad:
            _accum(wh, h.data[:, None] * dz[None, :])
        _accum(b, dz)

    pair._parents = (x, h, c, wx, wh, b)
    pair._backward = backward if req else None
    return pair[0], pair[1]
