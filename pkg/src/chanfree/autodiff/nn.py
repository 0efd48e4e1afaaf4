"""Stateful layers built on the functional ops."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from chanfree.autodiff import functional as F
from chanfree.autodiff.tensor import Param, Tensor
from chanfree.errors import ConfigurationError


class Module:
    """Container that discovers parameters, buffers and submodules by attribute."""

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if isinstance(value, (Param, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Param, Module)):
                        yield f"{key}.{i}", item
            elif isinstance(value, dict):
                for k, item in value.items():
                    if isinstance(item, (Param, Module)):
                        yield f"{key}.{k}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Param):
                yield name, value
            else:
                yield from value.named_parameters(name + ".")

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key in getattr(self, "_buffers", ()):
            value = getattr(self, key)
            if value is not None:
                yield f"{prefix}{key}", value
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{key}.")

    def _set_buffer(self, dotted: str, value: np.ndarray):
        owner, _, attr = dotted.rpartition(".")
        mod = self
        for part in owner.split(".") if owner else ():
            if isinstance(mod, (list, tuple)):
                mod = mod[int(part)]
            elif isinstance(mod, dict):
                mod = mod[part]
            else:
                mod = getattr(mod, part)
        setattr(mod, attr, np.array(value))

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def astype(self, dtype):
        for p in self.parameters():
            p.astype(dtype)
        for m in self.modules():
            for key in getattr(m, "_buffers", ()):
                value = getattr(m, key)
                if value is not None and value.dtype.kind == "f":
                    setattr(m, key, value.astype(dtype))
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: np.array(b, copy=True) for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        params = dict(self.named_parameters())
        for name, p in params.items():
            if name not in state:
                if strict:
                    raise ConfigurationError(f"missing parameter {name!r} in state")
                continue
            if state[name].shape != p.shape:
                raise ConfigurationError(f"shape mismatch for {name!r}: {state[name].shape} vs {p.shape}")
            p.assign(state[name])
        buffer_names = {n for n, _ in self._all_buffer_slots()}
        for name in buffer_names:
            if name in state:
                self._set_buffer(name, state[name])
        if strict:
            unknown = set(state) - set(params) - buffer_names
            if unknown:
                raise ConfigurationError(f"unexpected entries in state: {sorted(unknown)}")

    def _all_buffer_slots(self, prefix: str = ""):
        for key in getattr(self, "_buffers", ()):
            yield f"{prefix}{key}", getattr(self, key)
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value._all_buffer_slots(f"{prefix}{key}.")


def _uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 dtype=np.float64):
        self.weight = Param(_uniform_fan_in(rng, (d_out, d_in), d_in, dtype))
        self.bias = Param(_uniform_fan_in(rng, (d_out,), d_in, dtype)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)

    def macs(self) -> int:
        return self.d_in * self.d_out


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None, bias: bool = False, dtype=np.float64):
        if kernel % 2 == 0:
            raise ConfigurationError("kernel size must be odd")
        fan_in = c_in * kernel
        self.weight = Param(_uniform_fan_in(rng, (c_out, c_in, kernel), fan_in, dtype))
        self.bias = Param(_uniform_fan_in(rng, (c_out,), fan_in, dtype)) if bias else None
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        self.padding = (kernel - 1) // 2 if padding is None else padding

    def forward(self, x):
        return F.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def out_length(self, length: int) -> int:
        return (length + 2 * self.padding - self.kernel) // self.stride + 1

    def macs(self, length: int) -> int:
        return self.c_out * self.c_in * self.kernel * self.out_length(length)


class BatchNorm1d(Module):
    """Batch normalization over ``(n, l)`` with exponential running estimates.

    Running statistics start uninitialized; evaluating before any train-mode
    call is a configuration error.
    """

    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float64):
        self.gamma = Param(np.ones(channels, dtype=dtype))
        self.beta = Param(np.zeros(channels, dtype=dtype))
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.running_mean: np.ndarray | None = None
        self.running_var: np.ndarray | None = None

    def forward(self, x):
        if self.training:
            out, mu, var = F.batch_norm(x, self.gamma, self.beta, eps=self.eps)
            m = x.shape[0] * x.shape[2]
            unbiased = var * m / (m - 1)
            if self.running_mean is None:
                self.running_mean, self.running_var = mu.copy(), unbiased.copy()
            else:
                self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
                self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
            return out
        if self.running_mean is None:
            raise ConfigurationError("BatchNorm1d evaluated before running statistics were initialized")
        out, _, _ = F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, eps=self.eps)
        return out


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5, dtype=np.float64):
        self.gamma = Param(np.ones(d, dtype=dtype))
        self.beta = Param(np.zeros(d, dtype=dtype))
        self.eps = eps

    def forward(self, x):
        return F.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Embedding(Module):
    def __init__(self, vocab: int, d: int, rng: np.random.Generator, std: float = 0.02, dtype=np.float64):
        self.table = Param(rng.normal(0.0, std, size=(vocab, d)).astype(dtype))

    def forward(self, ids):
        return F.embedding(self.table, ids)

    def grow(self, vocab: int, rng: np.random.Generator, std: float = 0.02):
        """Append freshly initialized rows so ids up to ``vocab - 1`` are valid."""
        old = self.table.data
        if vocab <= old.shape[0]:
            return
        extra = rng.normal(0.0, std, size=(vocab - old.shape[0], old.shape[1])).astype(old.dtype)
        self.table = Param(np.concatenate([old, extra]), trainable=self.table.requires_grad)


__all__ = ["Module", "Linear", "Conv1d", "BatchNorm1d", "LayerNorm", "Embedding", "Tensor"]
