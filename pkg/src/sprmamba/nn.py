"""Parameter containers and the layers the network is assembled from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .exceptions import DimensionError
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor that an optimiser updates."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Base class: parameters and sub-modules are discovered from attributes.

    Attribute order defines parameter order, so two modules built from the
    same config enumerate their parameters identically.
    """

    training: bool = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise DimensionError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"parameter {name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(_uniform(rng, in_features, (in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class Conv1d(Module):
    """Dense temporal convolution with kernel ``[k, Cin, Cout]``."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 dilation: int = 1, padding: str = "same"):
        self.dilation = dilation
        self.padding = padding
        self.weight = Parameter(_uniform(rng, kernel_size * in_channels, (kernel_size, in_channels, out_channels)))
        self.bias = Parameter(np.zeros(out_channels))

    def forward(self, x):
        return F.conv1d(x, self.weight, self.bias, self.dilation, self.padding)


class DepthwiseConv1d(Module):
    def __init__(self, channels: int, kernel_size: int, rng: np.random.Generator, padding: str = "causal"):
        self.padding = padding
        self.weight = Parameter(_uniform(rng, kernel_size, (kernel_size, channels)))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x):
        return F.depthwise_conv1d(x, self.weight, self.bias, 1, self.padding)


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        self.eps = eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x):
        return F.layer_norm(x, self.weight, self.bias, self.eps)


class InstanceNorm(Module):
    """Affine instance normalisation over time, mask- and causality-aware."""

    def __init__(self, channels: int, eps: float = 1e-5, causal: bool = False):
        self.eps = eps
        self.causal = causal
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x, mask=None):
        return F.instance_norm(x, self.weight, self.bias, self.eps, mask=mask, causal=self.causal)


class Dropout(Module):
    def __init__(self, rate: float, rng: np.random.Generator):
        self.rate = rate
        self.rng = rng

    def forward(self, x):
        return F.dropout(x, self.rate, self.rng, self.training)
