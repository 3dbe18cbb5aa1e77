"""Dense tensors with reverse-mode automatic differentiation.

Every operation records a closure on a tape when any input is tracked;
``backward`` runs one reverse-topological sweep. Gradients accumulate
additively on leaf tensors, so calling backward twice without resetting
doubles them. Only the shapes the model needs are supported (scalars, 1-D,
2-D); reductions accumulate in float64 even when data is float32.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import NotScalar, ShapeMismatch

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    # -- bookkeeping ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, astensor(other))

    def __radd__(self, other):
        return add(astensor(other), self)

    def __sub__(self, other):
        return sub(self, astensor(other))

    def __rsub__(self, other):
        return sub(astensor(other), self)

    def __mul__(self, other):
        return mul(self, astensor(other))

    def __rmul__(self, other):
        return mul(astensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, astensor(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, pow_scalar(other, -1.0))
        return mul(self, astensor(1.0 / other))

    def __pow__(self, p):
        return pow_scalar(self, p)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        """Reverse-topological sweep from a scalar loss."""
        if self.data.size != 1:
            raise NotScalar(f"backward needs a scalar, got shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        local: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = local.get(id(node))
            if g is None:
                continue
            if node._backward is not None:
                for parent, contrib in node._backward(g):
                    key = id(parent)
                    if key in local:
                        local[key] = local[key] + contrib
                    else:
                        local[key] = np.asarray(contrib)
            elif node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            else:
                continue
        # expose sweep grads on intermediates for inspection (overwritten next sweep)
        for node in order:
            if node._backward is not None and id(node) in local:
                node.grad = local[id(node)]


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(*ts: Tensor) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad or t._parents for t in ts)


def _make(data: np.ndarray, parents, backward) -> Tensor:
    out = Tensor(data)
    if parents is not None:
        out._parents = tuple(parents)
        out._backward = backward
        out.requires_grad = True
    return out


def _reduce_to(shape: tuple[int, ...], g: np.ndarray) -> np.ndarray:
    """Sum gradient g down to a broadcast operand's shape."""
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    if len(shape) == 1 and g.ndim == 2 and shape[0] == g.shape[1]:
        return g.sum(axis=0)
    if len(shape) == 2 and shape[1] == 1 and g.ndim == 2 and shape[0] == g.shape[0]:
        return g.sum(axis=1, keepdims=True)
    if len(shape) == 2 and shape[0] == 1 and g.ndim == 2 and shape[1] == g.shape[1]:
        return g.sum(axis=0, keepdims=True)
    raise ShapeMismatch(f"cannot reduce grad {g.shape} to {shape}")


_BROADCAST_OK = "broadcast limited to scalar, row, or column operands"


def _check_ewise(a: Tensor, b: Tensor):
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) == 2 and sb in ((sa[1],), (1, sa[1]), (sa[0], 1)):
        return
    if len(sb) == 2 and sa in ((sb[1],), (1, sb[1]), (sb[0], 1)):
        return
    raise ShapeMismatch(f"elementwise op on {sa} vs {sb}; {_BROADCAST_OK}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_ewise(a, b)
    data = a.data + b.data
    if not _tracked(a, b):
        return Tensor(data)

    def backward(g):
        return ((a, _reduce_to(a.data.shape, g)), (b, _reduce_to(b.data.shape, g)))

    return _make(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_ewise(a, b)
    data = a.data - b.data
    if not _tracked(a, b):
        return Tensor(data)

    def backward(g):
        return ((a, _reduce_to(a.data.shape, g)), (b, _reduce_to(b.data.shape, -g)))

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_ewise(a, b)
    data = a.data * b.data
    if not _tracked(a, b):
        return Tensor(data)

    def backward(g):
        return (
            (a, _reduce_to(a.data.shape, g * b.data)),
            (b, _reduce_to(b.data.shape, g * a.data)),
        )

    return _make(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    if not _tracked(a):
        return Tensor(-a.data)
    return _make(-a.data, (a,), lambda g: ((a, -g),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul on {a.data.shape} vs {b.data.shape}")
    data = a.data @ b.data
    if not _tracked(a, b):
        return Tensor(data)

    def backward(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _make(data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if not _tracked(a):
        return Tensor(a.data.T)
    return _make(a.data.T.copy(), (a,), lambda g: ((a, g.T),))


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    ts = [astensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    if not _tracked(*ts):
        return Tensor(data)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        out = []
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            out.append((t, g[tuple(sl)]))
        return out

    return _make(data, ts, backward)


def getitem(a: Tensor, key) -> Tensor:
    """Basic (slice) indexing; use gather_rows for repeated fancy indexing."""
    data = a.data[key]
    if not _tracked(a):
        return Tensor(data)

    def backward(g):
        z = np.zeros_like(a.data)
        z[key] += g
        return ((a, z),)

    return _make(data, (a,), backward)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather with repetition; gradient scatter-adds back."""
    idx = np.asarray(idx, dtype=np.intp)
    data = a.data[idx]
    if not _tracked(a):
        return Tensor(data)

    def backward(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return ((a, z),)

    return _make(data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)
    if not _tracked(a):
        return Tensor(data)
    return _make(data, (a,), lambda g: ((a, g * (a.data > 0.0)),))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    data = _stable_sigmoid(a.data)
    if not _tracked(a):
        return Tensor(data)
    return _make(data, (a,), lambda g: ((a, g * data * (1.0 - data)),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    data = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
    if not _tracked(a):
        return Tensor(data)
    return _make(data, (a,), lambda g: ((a, g * _stable_sigmoid(a.data)),))


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    if not _tracked(a):
        return Tensor(data)
    return _make(data, (a,), lambda g: ((a, g * (1.0 - data * data)),))


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    if not _tracked(a):
        return Tensor(data)
    return _make(data, (a,), lambda g: ((a, g * data),))


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)
    if not _tracked(a):
        return Tensor(data)
    return _make(data, (a,), lambda g: ((a, g / a.data),))


def pow_scalar(a: Tensor, p: float) -> Tensor:
    data = a.data**p
    if not _tracked(a):
        return Tensor(data)
    return _make(data, (a,), lambda g: ((a, g * p * a.data ** (p - 1.0)),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)
    if not _tracked(a):
        return Tensor(data)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return ((a, data * (g - dot)),)

    return _make(data, (a,), backward)


def dropout(a: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not train or p <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    mask = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    data = a.data * mask
    if not _tracked(a):
        return Tensor(data)
    return _make(data, (a,), lambda g: ((a, g * mask),))


def smooth_l1(pred: Tensor, target: np.ndarray) -> Tensor:
    """Elementwise Smooth-L1 (Huber, delta=1) against a constant target."""
    t = np.asarray(target, dtype=pred.data.dtype)
    if t.shape != pred.data.shape:
        raise ShapeMismatch(f"smooth_l1 on {pred.data.shape} vs {t.shape}")
    d = pred.data - t
    absd = np.abs(d)
    data = np.where(absd < 1.0, 0.5 * d * d, absd - 0.5)
    if not _tracked(pred):
        return Tensor(data)
    return _make(data, (pred,), lambda g: ((pred, g * np.clip(d, -1.0, 1.0)),))


def _restore(shape, axis, keepdims, g):
    if axis is None:
        return np.broadcast_to(g, shape).astype(g.dtype, copy=True)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).astype(g.dtype, copy=True)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    # accumulate in float64 even for float32 data
    data = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.data.dtype)
    if not _tracked(a):
        return Tensor(data)

    def backward(g):
        return ((a, _restore(a.data.shape, axis, keepdims, g)),)

    return _make(data, (a,), backward)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    data = (a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64) / count).astype(a.data.dtype)
    if not _tracked(a):
        return Tensor(data)

    def backward(g):
        return ((a, _restore(a.data.shape, axis, keepdims, g) / count),)

    return _make(data, (a,), backward)


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise log-sum-exp with a detached max shift (exact gradient)."""
    shift = a.data.max(axis=1, keepdims=True)
    return add(log(reduce_sum(exp(sub(a, Tensor(shift))), axis=1, keepdims=True)), Tensor(shift))
