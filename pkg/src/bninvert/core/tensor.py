"""Tensor values and the single-use reverse-mode graph built by one forward pass."""
from __future__ import annotations

from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, DTypeLike

from bninvert.core.errors import GraphError, InvalidArgumentError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_DEFAULT_DTYPE: ContextVar[np.dtype] = ContextVar("bninvert_default_dtype", default=np.dtype(np.float32))


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE.get()


@contextmanager
def precision(dtype: DTypeLike) -> Iterator[None]:
    """Switch the dtype used for new tensors (float64 for gradient and oracle checks)."""
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise InvalidArgumentError(f"Unsupported precision: {resolved}")
    token = _DEFAULT_DTYPE.set(resolved)
    try:
        yield
    finally:
        _DEFAULT_DTYPE.reset(token)


class Node:
    """One primitive application: its inputs and the closure mapping output grad to input grads."""

    __slots__ = ("op", "parents", "backward_fn", "consumed")

    def __init__(self, op: str, parents: Tuple["Tensor", ...], backward_fn: BackwardFn) -> None:
        self.op = op
        self.parents = parents
        self.backward_fn: Optional[BackwardFn] = backward_fn
        self.consumed = False

    def release(self) -> None:
        # saved intermediates live in the closure
        self.backward_fn = None
        self.consumed = True


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[DTypeLike] = None,
        name: Optional[str] = None,
    ) -> None:
        self.data: np.ndarray = np.array(data, dtype=dtype or default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = np.zeros_like(self.data) if self.requires_grad else None
        self._node: Optional[Node] = None
        self.name = name

    @classmethod
    def from_op(cls, data: np.ndarray, op: str, parents: Sequence["Tensor"], backward_fn: BackwardFn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._node = Node(op, tuple(parents), backward_fn) if out.requires_grad else None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        if self.size != 1:
            raise InvalidArgumentError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0)

    def backward(self) -> None:
        Graph.from_output(self).backward()

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"

    # arithmetic sugar; the primitives live in bninvert.core.ops
    def __add__(self, other):
        return _ops.add(self, other)

    def __radd__(self, other):
        return _ops.add(other, self)

    def __sub__(self, other):
        return _ops.sub(self, other)

    def __rsub__(self, other):
        return _ops.sub(other, self)

    def __mul__(self, other):
        return _ops.mul(self, other)

    def __rmul__(self, other):
        return _ops.mul(other, self)

    def __truediv__(self, other):
        return _ops.div(self, other)

    def __neg__(self):
        return _ops.neg(self)

    def __matmul__(self, other):
        return _ops.matmul(self, other)


@dataclass
class Graph:
    """Topologically ordered record of one forward pass ending in ``output``."""

    output: Tensor
    nodes: List[Tensor]

    @classmethod
    def from_output(cls, output: Tensor) -> "Graph":
        order: List[Tensor] = []
        visited: set[int] = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            node = tensor._node
            if node is not None and node.consumed:
                raise GraphError(
                    f"Graph already consumed at op '{node.op}'; run a new forward pass before backward"
                )
            stack.append((tensor, True))
            if node is not None:
                for parent in reversed(node.parents):
                    if id(parent) not in visited:
                        stack.append((parent, False))
        return cls(output=output, nodes=order)

    def backward(self) -> None:
        out = self.output
        if out.size != 1:
            raise InvalidArgumentError(f"backward needs a scalar loss, got shape {out.shape}")
        if not out.requires_grad:
            raise GraphError("Loss does not depend on any tensor with requires_grad=True")

        grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.data)}
        for tensor in reversed(self.nodes):
            g = grads.pop(id(tensor), None)
            if g is None:
                continue
            node = tensor._node
            if node is None:
                if tensor.requires_grad:
                    if tensor.grad is None:
                        tensor.grad = np.zeros_like(tensor.data)
                    tensor.grad += g
                continue
            assert node.backward_fn is not None
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

        for tensor in self.nodes:
            if tensor._node is not None:
                tensor._node.release()


from bninvert.core import ops as _ops  # noqa: E402
