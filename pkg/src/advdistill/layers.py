"""Trainable layers and the network base class.

Parameters are ``Tensor`` leaves; batch-norm running statistics are plain
numpy buffers (serialized with the parameters but never given gradients).
Initialisation is Kaiming-uniform for convolutions and affine layers,
scale 1 / shift 0 for batch norm.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class FrozenModelError(RuntimeError):
    """A gradient or update was requested for a frozen network."""


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """Minimal layer protocol: named parameters plus named buffers."""

    def parameters(self) -> list[tuple[str, Tensor]]:
        return []

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return []


class Conv2d(Layer):
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1,
                 padding: int = 1, bias: bool = False, *,
                 rng: np.random.Generator, dtype=np.float32):
        fan_in = in_ch * kernel * kernel
        self.weight = Tensor(kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype),
                             requires_grad=True, label="conv.weight")
        self.bias = None
        if bias:
            self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True, label="conv.bias")
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def parameters(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out


class BatchNorm2d(Layer):
    def __init__(self, ch: int, eps: float = 1e-5, momentum: float = 0.1, *, dtype=np.float32):
        self.gamma = Tensor(np.ones(ch, dtype=dtype), requires_grad=True, label="bn.gamma")
        self.beta = Tensor(np.zeros(ch, dtype=dtype), requires_grad=True, label="bn.beta")
        self.running_mean = np.zeros(ch, dtype=dtype)
        self.running_var = np.ones(ch, dtype=dtype)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            mean = x.data.mean(axis=(0, 2, 3))
            var = x.data.var(axis=(0, 2, 3))
            m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
            unbiased = var * (m / max(m - 1, 1))
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (unbiased - self.running_var)
            return T.batch_norm(x, self.gamma, self.beta, mean, var, self.eps, through_stats=True)
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.eps, through_stats=False)

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, *,
                 rng: np.random.Generator, dtype=np.float32):
        self.weight = Tensor(kaiming_uniform(rng, (in_features, out_features), in_features, dtype),
                             requires_grad=True, label="linear.weight")
        self.bias = Tensor(np.zeros(out_features, dtype=dtype),
                           requires_grad=True, label="linear.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]


class Network:
    """Base class: a named tree of layers with freeze/serialize support."""

    def __init__(self):
        self._layers: dict[str, Layer | "Network"] = {}
        self.frozen = False

    def register(self, name: str, layer):
        self._layers[name] = layer
        return layer

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for lname, layer in self._layers.items():
            if isinstance(layer, Network):
                out.extend((f"{lname}.{n}", p) for n, p in layer.named_parameters())
            else:
                out.extend((f"{lname}.{n}", p) for n, p in layer.parameters())
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for lname, layer in self._layers.items():
            if isinstance(layer, Network):
                out.extend((f"{lname}.{n}", b) for n, b in layer.named_buffers())
            else:
                out.extend((f"{lname}.{n}", b) for n, b in layer.buffers())
        return out

    def freeze(self):
        """Mark parameters immutable; gradient requests will be rejected."""
        self.frozen = True
        for p in self.parameters():
            p.requires_grad = False
        return self

    def set_param_grads(self, enabled: bool):
        if self.frozen and enabled:
            raise FrozenModelError("cannot enable parameter gradients on a frozen network")
        for p in self.parameters():
            p.requires_grad = enabled

    def trainable_parameters(self) -> list[Tensor]:
        if self.frozen:
            raise FrozenModelError("network is frozen; it has no trainable parameters")
        return self.parameters()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own_params = dict(self.named_parameters())
        own_buffers = dict(self.named_buffers())
        expected = set(own_params) | set(own_buffers)
        got = set(state)
        if expected != got:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ValueError(f"state mismatch: missing={missing}, unexpected={extra}")
        for name, p in own_params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for '{name}': {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()
        for name, buf in own_buffers.items():
            arr = np.asarray(state[name], dtype=buf.dtype)
            if arr.shape != buf.shape:
                raise ValueError(f"shape mismatch for buffer '{name}': {arr.shape} vs {buf.shape}")
            buf[...] = arr

    def param_bytes(self) -> bytes:
        """Concatenated little-endian bytes of all parameters and buffers."""
        chunks = [p.data.astype("<f4", copy=False).tobytes() for _, p in self.named_parameters()]
        chunks += [b.astype("<f4", copy=False).tobytes() for _, b in self.named_buffers()]
        return b"".join(chunks)
