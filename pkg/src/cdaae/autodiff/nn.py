"""Small module system: parameter containers with train/eval mode and buffers."""

from __future__ import annotations

from typing import Callable, Iterator, Optional

import numpy as np

from . import layers as L
from .tensor import Parameter, Tensor


class Module:
    """Base container. Attributes that are Parameters, Modules or lists of
    Modules are discovered in assignment order."""

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        for name, p in self._named_parameters(prefix):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def _named_parameters(self, prefix: str) -> Iterator[tuple[str, Parameter]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value._named_parameters(full + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
        for name, buf in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{name}", buf

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
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"param/{n}": p.data for n, p in self.named_parameters()}
        out.update({f"buffer/{n}": b for n, b in self.named_buffers()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copy values in place (optimizers keep their parameter references)."""
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"state is missing {len(missing)} entries, e.g. {missing[:3]}")
        for name, dst in own.items():
            src = np.asarray(state[name])
            if src.shape != dst.shape:
                raise ValueError(f"{name}: shape {src.shape} does not match {dst.shape}")
            dst[...] = src


def _he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, padding: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.weight = Parameter(_he_normal(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel))
        self.bias = Parameter(np.zeros(out_ch, np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return L.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, padding: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.stride, self.padding = stride, padding
        # fan-in of a transposed conv output pixel is roughly in_ch * (kernel/stride)^2
        fan_in = max(1, in_ch * (kernel // stride) ** 2)
        self.weight = Parameter(_he_normal(rng, (in_ch, out_ch, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(out_ch, np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return L.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = L.BN_MOMENTUM, eps: float = L.BN_EPS):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter(np.ones(channels, np.float32))
        self.beta = Parameter(np.zeros(channels, np.float32))
        self._buffers = {
            "running_mean": np.zeros(channels, np.float32),
            "running_var": np.ones(channels, np.float32),
        }

    def forward(self, x: Tensor) -> Tensor:
        return L.batchnorm(
            x, self.gamma, self.beta, self.training,
            self._buffers["running_mean"], self._buffers["running_var"],
            self.momentum, self.eps,
        )


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, gain: float = 2.0):
        super().__init__()
        std = np.sqrt(gain / in_features)
        self.weight = Parameter((rng.standard_normal((in_features, out_features)) * std).astype(np.float32))
        self.bias = Parameter(np.zeros(out_features, np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return L.dense(x, self.weight, self.bias)


class Sequential(Module):
    def __init__(self, *layers: Module | Callable[[Tensor], Tensor]):
        super().__init__()
        self.layers = [l for l in layers if isinstance(l, Module)]
        self._steps = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for step in self._steps:
            x = step(x)
        return x


def conv_bn_relu(in_ch: int, out_ch: int, kernel: int, stride: int, padding: int, rng: np.random.Generator, act: Optional[Callable] = L.relu) -> Sequential:
    steps = [Conv2d(in_ch, out_ch, kernel, stride, padding, rng, bias=False), BatchNorm(out_ch)]
    if act is not None:
        steps.append(act)
    return Sequential(*steps)


def deconv_bn_relu(in_ch: int, out_ch: int, kernel: int, stride: int, padding: int, rng: np.random.Generator) -> Sequential:
    return Sequential(ConvTranspose2d(in_ch, out_ch, kernel, stride, padding, rng, bias=False), BatchNorm(out_ch), L.relu)
