"""Array container with a reverse-mode gradient tape.

Every differentiable operation creates a new :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients. Node ids
are drawn from a global monotone counter, so sorting reachable nodes by id in
descending order is a valid reverse topological order; that sorted list is the
tape replayed by :func:`backward`.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()
_grad_enabled = True

SUPPORTED_DTYPES = (np.float32, np.float64)


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "name")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in SUPPORTED_DTYPES:
            arr = arr.astype(np.float64 if dtype is None else dtype)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._id = next(_ids)
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # -- operator sugar (implemented in ops) -------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

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

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A leaf tensor that owns a gradient buffer."""

    __slots__ = ("trainable",)

    def __init__(self, data, dtype=None, name: str | None = None, trainable: bool = True):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, dtype={self.dtype}, name={self.name!r})"


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result; record it on the tape only if a parent needs grads."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# -- tape replay --------------------------------------------------------------

@dataclass
class Tape:
    """Reverse topological record of the graph reachable from a root."""

    nodes: list[Tensor]

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        seen: set[int] = set()
        stack = [root]
        nodes = []
        while stack:
            t = stack.pop()
            if t._id in seen:
                continue
            seen.add(t._id)
            nodes.append(t)
            stack.extend(p for p in t._parents if p.requires_grad and p._id not in seen)
        nodes.sort(key=lambda t: t._id, reverse=True)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass
class BackwardReport:
    reached: list[str] = field(default_factory=list)
    detached: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.detached


def backward(loss: Tensor, params: Iterable[Parameter] | None = None) -> BackwardReport:
    """Accumulate d(loss)/d(param) into ``param.grad`` for every reachable leaf.

    Parameters listed in ``params`` that the loss does not depend on keep a
    zero gradient and are named in ``report.detached``.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    report = BackwardReport()
    if not loss.requires_grad:
        for i, p in enumerate(params or ()):
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            report.detached.append(p.name or f"param{i}")
        return report

    tape = Tape.from_root(loss)
    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    touched: set[int] = set()
    for node in tape.nodes:
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._backward is None:
            # leaf
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad = node.grad + g
            touched.add(node._id)
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise RuntimeError(
                    f"gradient shape {pg.shape} does not match input shape {parent.shape}"
                )
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg

    for i, p in enumerate(params or ()):
        name = p.name or f"param{i}"
        if p._id in touched:
            report.reached.append(name)
        else:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            report.detached.append(name)
    return report
