"""
Dense tensors with reverse-mode differentiation
===============================================

A ``Tensor`` wraps a numpy array. Every differentiable operation returns a
new tensor that remembers its parents and a closure mapping the output
gradient to the parents' gradients. ``Tensor.backward`` walks that graph in
reverse topological order (see ``Tape``) and accumulates gradients into the
leaves that have ``requires_grad`` set.

Forward data is never mutated by the library after construction; only the
``grad`` buffers change. Optimizers are the single exception and update
parameter leaves in place.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.errors import ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast shapes {a} and {b}") from exc


class Tensor:
    """n-dimensional real array that can take part in the gradient tape."""

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype, copy=True)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple[Tensor, ...] = ()
        self._backward_fn: Optional[BackwardFn] = None
        self._op = ""

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------
    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward_fn = None
        out._op = ""
        return out

    @classmethod
    def _make(
        cls, arr: np.ndarray, parents: Tuple["Tensor", ...], backward_fn: BackwardFn, op: str
    ) -> "Tensor":
        out = cls._wrap(arr)
        out._op = op
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward_fn = backward_fn
        return out

    def _lift(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor._wrap(np.asarray(other, dtype=self.data.dtype))

    @classmethod
    def zeros(cls, shape, requires_grad: bool = False, dtype=np.float64) -> "Tensor":
        return cls(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @classmethod
    def ones(cls, shape, requires_grad: bool = False, dtype=np.float64) -> "Tensor":
        return cls(np.ones(shape, dtype=dtype), requires_grad=requires_grad)

    # ------------------------------------------------------------------
    # introspection
    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward_fn is None

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # ------------------------------------------------------------------
    # arithmetic
    # ------------------------------------------------------------------
    def __add__(self, other: ArrayLike) -> "Tensor":
        other = self._lift(other)
        _broadcast_shape(self.shape, other.shape)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
            "add",
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other: ArrayLike) -> "Tensor":
        other = self._lift(other)
        _broadcast_shape(self.shape, other.shape)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)),
            "sub",
        )

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return self._lift(other) - self

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = self._lift(other)
        _broadcast_shape(self.shape, other.shape)
        a, b = self.data, other.data
        return Tensor._make(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = self._lift(other)
        _broadcast_shape(self.shape, other.shape)
        a, b = self.data, other.data
        return Tensor._make(
            a / b,
            (self, other),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)),
            "div",
        )

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return self._lift(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self.data
        p = float(exponent)
        return Tensor._make(a**p, (self,), lambda g: (g * p * a ** (p - 1),), "pow")

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        other = self._lift(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ShapeError(f"matmul expects 2-D operands, got {self.shape} @ {other.shape}")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(
                f"matmul inner dimension mismatch: {self.shape[1]} vs {other.shape[0]}"
            )
        a, b = self.data, other.data
        return Tensor._make(a @ b, (self, other), lambda g: (g @ b.T, a.T @ g), "matmul")

    # ------------------------------------------------------------------
    # elementwise functions
    # ------------------------------------------------------------------
    def square(self) -> "Tensor":
        a = self.data
        return Tensor._make(a * a, (self,), lambda g: (2.0 * a * g,), "square")

    def abs(self) -> "Tensor":
        a = self.data
        return Tensor._make(np.abs(a), (self,), lambda g: (np.sign(a) * g,), "abs")

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,), "exp")

    def log(self) -> "Tensor":
        a = self.data
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,), "log")

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        return Tensor._make(out, (self,), lambda g: (g * 0.5 / out,), "sqrt")

    def sigmoid(self) -> "Tensor":
        s = _sigmoid(self.data)
        return Tensor._make(s, (self,), lambda g: (g * s * (1.0 - s),), "sigmoid")

    def silu(self) -> "Tensor":
        a = self.data
        s = _sigmoid(a)
        return Tensor._make(a * s, (self,), lambda g: (g * s * (1.0 + a * (1.0 - s)),), "silu")

    def softplus(self) -> "Tensor":
        a = self.data
        out = np.logaddexp(0.0, a).astype(a.dtype, copy=False)
        return Tensor._make(out, (self,), lambda g: (g * _sigmoid(a),), "softplus")

    def astype(self, dtype) -> "Tensor":
        source = self.data.dtype
        return Tensor._make(
            self.data.astype(dtype), (self,), lambda g: (g.astype(source),), "astype"
        )

    # ------------------------------------------------------------------
    # reductions and shape manipulation
    # ------------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor._make(np.asarray(out), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        source = self.shape
        try:
            out = self.data.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"cannot reshape {source} into {shape}") from exc
        return Tensor._make(out, (self,), lambda g: (g.reshape(source),), "reshape")

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._make(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),), "transpose"
        )

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, index) -> "Tensor":
        source = self.data

        def backward(g):
            acc = np.zeros_like(source)
            np.add.at(acc, index, g)
            return (acc,)

        return Tensor._make(np.array(source[index]), (self,), backward, "getitem")

    def flip(self, axes) -> "Tensor":
        return Tensor._make(
            np.flip(self.data, axes).copy(), (self,), lambda g: (np.flip(g, axes),), "flip"
        )

    # ------------------------------------------------------------------
    # differentiation
    # ------------------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad leaf."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("loss is not attached to the gradient tape")
        Tape.record(self).propagate(np.ones_like(self.data))


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # exp only ever sees a non-positive argument
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype, copy=False)


class Tape:
    """Nodes of a graph in topological order (parents before children)."""

    def __init__(self, root: Tensor, nodes: Sequence[Tensor]):
        self.root = root
        self.nodes = list(nodes)

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order = []
        visited = set()
        stack = [(root, False)]
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
        return cls(root, order)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def propagate(self, seed: np.ndarray) -> None:
        grads = {id(self.root): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                g = np.array(g, dtype=node.data.dtype).reshape(node.shape)
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def tensor(data: ArrayLike, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def as_tensor(data: ArrayLike, dtype=None) -> Tensor:
    """Wrap without copying when possible; tensors pass through."""
    if isinstance(data, Tensor):
        return data
    arr = np.asarray(data, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return Tensor._wrap(arr)


def backward(loss: Tensor) -> None:
    loss.backward()


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim:
            raise ShapeError(f"concat rank mismatch: {t.ndim} vs {ndim}")
        for d in range(ndim):
            if d != axis and t.shape[d] != tensors[0].shape[d]:
                raise ShapeError(
                    f"concat dimension {d} mismatch: {t.shape[d]} vs {tensors[0].shape[d]}"
                )
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat"
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        t = as_tensor(t)
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        expanded.append(t.reshape(tuple(shape)))
    return concat(expanded, axis=axis)


def where(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    a_shape, b_shape = a.shape, b.shape
    return Tensor._make(
        np.where(mask, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(np.where(mask, g, 0.0), a_shape),
                   _unbroadcast(np.where(mask, 0.0, g), b_shape)),
        "where",
    )


add = Tensor.__add__
mul = Tensor.__mul__


def silu(x: Tensor) -> Tensor:
    return x.silu()


def square(x: Tensor) -> Tensor:
    return x.square()


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return x.mean(axis=axis, keepdims=keepdims)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return x.sum(axis=axis, keepdims=keepdims)
