"""Parameter containers on top of :mod:`cocgan.tensor`."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Owns parameters and child modules; names follow attribute order."""

    def named_parameters(self, prefix=""):
        out = OrderedDict()
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[full] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{full}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{full}.{i}"] = item
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())

    def astype(self, dtype):
        """Cast every parameter in place (for 64-bit gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def state_dict(self):
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters().items())

    def load_state_dict(self, state):
        params = self.named_parameters()
        for name, p in params.items():
            if name not in state:
                raise KeyError(name)
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype)


class Linear(Module):
    """Fully connected layer, ``x @ W + b`` with ``W`` of shape (in, out)."""

    def __init__(self, d_in, d_out, rng, bias=True):
        self.weight = T.param_init((d_in, d_out), "uniform_fan_in", rng)
        self.bias = T.param_init((d_out,), "zeros") if bias else None
        self.d_in = d_in
        self.d_out = d_out

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d):
        self.weight = T.param_init((d,), "constant", value=1.0)
        self.bias = T.param_init((d,), "zeros")

    def __call__(self, x):
        return T.layer_norm(x, self.weight, self.bias)


class MLP(Module):
    """FC(d -> ratio*d) -> GELU -> FC(ratio*d -> d)."""

    def __init__(self, d, ratio, rng):
        self.fc1 = Linear(d, d * ratio, rng)
        self.fc2 = Linear(d * ratio, d, rng)

    def __call__(self, x):
        return self.fc2(T.gelu(self.fc1(x)))
