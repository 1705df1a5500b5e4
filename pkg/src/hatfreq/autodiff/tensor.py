"""Dense tensors with reverse-mode differentiation.

A ``Tensor`` wraps an immutable numpy array.  Every differentiable primitive
records its parents and a vector-Jacobian product closure; ``backward``
replays those closures in exact reverse topological order.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when a primitive produces NaN or Inf."""


class GraphFreedError(RuntimeError):
    """Raised when backward is replayed over a graph that was already consumed."""


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


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


def grad_enabled() -> bool:
    return _GRAD_ENABLED


VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """An immutable n-d array that can take part in a recorded computation."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            # float arrays keep their precision; Python numbers and int arrays take the default
            keep = isinstance(data, (np.ndarray, np.floating)) and data.dtype in (np.float32, np.float64)
            dtype = data.dtype if keep else _DEFAULT_DTYPE
        arr = np.array(data, dtype=dtype, copy=True)
        arr.setflags(write=False)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Optional[VJP] = None
        self._op = "leaf"
        self._freed = False

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], vjp: VJP, op: str) -> "Tensor":
        data = np.asarray(data)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite value produced by primitive '{op}'")
        out = cls.__new__(cls)
        data.setflags(write=False)
        out.data = data
        out.grad = None
        out._op = op
        out._freed = False
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._vjp = vjp if track else None
        return out

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self._op})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar (implementations live in ops) -----------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, exponent: float):
        from . import ops
        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.index(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def backward(self, seed=None, retain_graph: bool = False) -> dict["Tensor", np.ndarray]:
        return backward(self, seed=seed, retain_graph=retain_graph)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, (int, float)):
        dtype = _DEFAULT_DTYPE
    return Tensor(x, dtype=dtype)


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, seed=None, retain_graph: bool = False) -> dict[Tensor, np.ndarray]:
    """Propagate ``seed`` (default 1) from a scalar ``loss`` to every leaf.

    Returns a map from each requires-grad leaf to its gradient; the same
    array is also stored on ``leaf.grad``.  Unless ``retain_graph`` is set
    the recorded closures are released afterwards.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._freed:
        raise GraphFreedError("backward called on a graph that has already been freed")
    if not loss.requires_grad:
        return {}
    if seed is None:
        seed_arr = np.ones(loss.shape, dtype=loss.dtype)
    else:
        seed_arr = np.asarray(seed.data if isinstance(seed, Tensor) else seed, dtype=loss.dtype)
        if seed_arr.size != 1:
            raise ShapeError("backward seed must be scalar")
        seed_arr = seed_arr.reshape(loss.shape)

    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): seed_arr}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            leaves[node] = g
            node.grad = g
            continue
        if node._freed or node._vjp is None:
            raise GraphFreedError(f"graph node '{node._op}' was freed by an earlier backward")
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise ShapeError(
                    f"backward rule of '{node._op}' produced {pg.shape} for parent {parent.shape}"
                )
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if not retain_graph:
        for node in order:
            if not node.is_leaf:
                node._vjp = None
                node._freed = True
    return leaves


def grad(loss: Tensor, wrt: Sequence[Tensor], retain_graph: bool = False) -> list[np.ndarray]:
    """Gradients of ``loss`` with respect to ``wrt`` (zeros where unreachable)."""
    gmap = backward(loss, retain_graph=retain_graph)
    return [gmap.get(t, np.zeros(t.shape, dtype=t.dtype)) for t in wrt]
