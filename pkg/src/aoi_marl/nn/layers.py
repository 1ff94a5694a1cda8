"""Network building blocks: linear maps, two-layer perceptrons, a GRU cell.

All trainable parameters are initialized uniformly in
[-1/sqrt(fan_in), +1/sqrt(fan_in)].
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractViolation
from .tensor import Parameter, Tensor, concat, matmul, relu, sigmoid, tanh


class Module:
    """Base class providing parameter discovery over attributes."""

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        seen: set[int] = set()

        def collect(obj):
            if isinstance(obj, Parameter):
                if id(obj) not in seen:
                    seen.add(id(obj))
                    params.append(obj)
            elif isinstance(obj, Module):
                for attr in obj.__dict__.values():
                    collect(attr)
            elif isinstance(obj, (list, tuple)):
                for item in obj:
                    collect(item)

        collect(self)
        return params

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def linear_forward(x: Tensor, weight: Parameter, bias: Parameter) -> Tensor:
    """Affine map x @ weight + bias, recorded for reverse mode."""
    if x.data.ndim != 2 or x.data.shape[1] != weight.data.shape[0]:
        raise ContractViolation(
            f"linear input {x.data.shape} does not conform to weight {weight.data.shape}"
        )
    if bias.data.shape != (weight.data.shape[1],):
        raise ContractViolation(
            f"bias shape {bias.data.shape} does not match weight {weight.data.shape}"
        )
    return matmul(x, weight) + bias


class Linear(Module):
    def __init__(self, name: str, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = Parameter(
            f"{name}/weight", _uniform_init(rng, (in_features, out_features), in_features)
        )
        self.bias = Parameter(f"{name}/bias", _uniform_init(rng, (out_features,), in_features))

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(x, self.weight, self.bias)


class TwoLayerMLP(Module):
    """Linear -> ReLU -> Linear, the shared perceptron used throughout."""

    def __init__(self, name: str, in_features: int, hidden: int, out_features: int,
                 rng: np.random.Generator):
        self.fc1 = Linear(f"{name}/fc1", in_features, hidden, rng)
        self.fc2 = Linear(f"{name}/fc2", hidden, out_features, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(x)))


class GRUCell(Module):
    """Gated recurrent cell.

    z = sigmoid([x, h] W_z + b_z)
    r = sigmoid([x, h] W_r + b_r)
    n = tanh([x, r * h] W_n + b_n)
    h' = (1 - z) * n + z * h
    """

    def __init__(self, name: str, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        fan = input_size + hidden_size
        self.w_update = Parameter(f"{name}/w_update", _uniform_init(rng, (fan, hidden_size), fan))
        self.b_update = Parameter(f"{name}/b_update", _uniform_init(rng, (hidden_size,), fan))
        self.w_reset = Parameter(f"{name}/w_reset", _uniform_init(rng, (fan, hidden_size), fan))
        self.b_reset = Parameter(f"{name}/b_reset", _uniform_init(rng, (hidden_size,), fan))
        self.w_cand = Parameter(f"{name}/w_cand", _uniform_init(rng, (fan, hidden_size), fan))
        self.b_cand = Parameter(f"{name}/b_cand", _uniform_init(rng, (hidden_size,), fan))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.data.shape[1] != self.input_size:
            raise ContractViolation(
                f"GRU input shape {x.data.shape} does not match input_size {self.input_size}"
            )
        if h.data.shape != (x.data.shape[0], self.hidden_size):
            raise ContractViolation(
                f"GRU hidden shape {h.data.shape} does not match "
                f"(batch={x.data.shape[0]}, hidden={self.hidden_size})"
            )
        xh = concat([x, h], axis=1)
        z = sigmoid(linear_forward(xh, self.w_update, self.b_update))
        r = sigmoid(linear_forward(xh, self.w_reset, self.b_reset))
        xrh = concat([x, r * h], axis=1)
        n = tanh(linear_forward(xrh, self.w_cand, self.b_cand))
        return (1.0 - z) * n + z * h
