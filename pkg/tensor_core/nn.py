"""
Parameter containers and the small layers the model is assembled from.
"""

from typing import Dict, Iterator, Tuple

import numpy as np

from .engine import Tensor, embedding, gelu, layer_norm, matmul
from .rng import Rng


class Parameter(Tensor):
    def __init__(self, values, name: str = ""):
        super().__init__(values, requires_grad=True, name=name)


class Module:
    def __init__(self):
        self._parameters: Dict[str, Parameter] = {}
        self._modules: Dict[str, "Module"] = {}

    def add_parameter(self, name: str, value) -> Parameter:
        parameter = value if isinstance(value, Parameter) else Parameter(value, name=name)
        parameter.name = name
        self._parameters[name] = parameter
        return parameter

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, p in self._parameters.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> Iterator[Parameter]:
        for _, p in self.named_parameters():
            yield p

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: Rng, bias: bool = True):
        super().__init__()
        self.weight = self.add_parameter("weight", rng.normal((in_dim, out_dim)) / np.sqrt(in_dim))
        self.bias = self.add_parameter("bias", np.zeros(out_dim)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gamma = self.add_parameter("gamma", np.ones(dim))
        self.beta = self.add_parameter("beta", np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class FeedForward(Module):
    def __init__(self, dim: int, rng: Rng, expansion: int = 4):
        super().__init__()
        self.up = self.add_module("up", Linear(dim, dim * expansion, rng.split("up")))
        self.down = self.add_module("down", Linear(dim * expansion, dim, rng.split("down")))

    def forward(self, x: Tensor) -> Tensor:
        return self.down(gelu(self.up(x)))


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: Rng, std: float = 0.02):
        super().__init__()
        self.table = self.add_parameter("table", rng.normal((count, dim), std))

    def forward(self, ids) -> Tensor:
        return embedding(self.table, ids)
