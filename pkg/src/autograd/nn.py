"""Parameter containers and the handful of layers the models are built from."""
from __future__ import annotations

import math
from collections.abc import Iterator
from typing import Any

import numpy as np

from src.autograd import ops
from src.autograd.tensor import Tensor
from src.errors import ContractError, DimensionError


class Parameter(Tensor):
    def __init__(self, data: np.ndarray, name: str | None = None) -> None:
        super().__init__(data, requires_grad=True, name=name)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, scale: float = 1.0) -> np.ndarray:
    """Centered uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)], optionally scaled."""
    bound = scale / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Walks attributes in assignment order, so parameter names are stable."""

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError(f"{type(self).__name__}.forward")

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield f"{prefix}{key}", value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield f"{prefix}{key}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {f"{prefix}{name}": p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        own = dict(self.named_parameters())
        wanted = {f"{prefix}{name}" for name in own}
        missing = sorted(wanted - state.keys())
        if missing:
            raise ContractError(f"checkpoint lacks parameters: {', '.join(missing[:5])}")
        for name, p in own.items():
            value = np.asarray(state[f"{prefix}{name}"], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"parameter '{name}': checkpoint shape {value.shape} != model {p.shape}")
            p.data = value.copy()


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, init_scale: float = 1.0) -> None:
        self.weight = Parameter(uniform_init(rng, (d_in, d_out), d_in, init_scale))
        self.bias = Parameter(uniform_init(rng, (d_out,), d_in, init_scale))

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        init_scale: float = 1.0,
    ) -> None:
        fan_in = c_in * kernel * kernel
        self.weight = Parameter(uniform_init(rng, (c_out, c_in, kernel, kernel), fan_in, init_scale))
        self.bias = Parameter(uniform_init(rng, (c_out,), fan_in, init_scale))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
    ) -> None:
        fan_in = c_in * kernel * kernel
        self.weight = Parameter(uniform_init(rng, (c_in, c_out, kernel, kernel), fan_in))
        self.bias = Parameter(uniform_init(rng, (c_out,), fan_in))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d_transpose(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5) -> None:
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias, self.eps)
