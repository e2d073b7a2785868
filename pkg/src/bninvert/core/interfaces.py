from __future__ import annotations

from typing import TYPE_CHECKING, Callable, List, Protocol

if TYPE_CHECKING:
    from bninvert.core.tensor import Tensor
    from bninvert.nn.layers import ForwardContext
    from bninvert.nn.model import Model


class Layer(Protocol):
    kind: str

    def forward(self, x: "Tensor", ctx: "ForwardContext") -> "Tensor":
        ...

    def parameters(self) -> List["Tensor"]:
        ...


EvalFn = Callable[["Model"], float]
