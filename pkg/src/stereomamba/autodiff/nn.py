"""Parameter containers and layers on top of the functional ops."""

import numpy as np

from . import conv as C
from . import functional as F
from .tensor import Tensor


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def uniform_init(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Attribute-walking parameter registry.

    Parameters are leaf tensors with ``requires_grad``; names are the dotted
    attribute paths, in attribute-assignment order.
    """

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.copy()

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        self.weight = parameter(uniform_init(rng, (n_out, n_in), n_in))
        self.bias = parameter(np.zeros(n_out)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, bias=True):
        self.weight = parameter(uniform_init(rng, (c_out, c_in, k, k), c_in * k * k))
        self.bias = parameter(np.zeros(c_out)) if bias else None
        self.stride, self.padding = stride, padding

    def forward(self, x):
        return C.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class DepthwiseConv2d(Module):
    def __init__(self, channels, k, rng, padding=None):
        self.weight = parameter(uniform_init(rng, (channels, 1, k, k), k * k))
        self.bias = parameter(np.zeros(channels))
        self.padding = k // 2 if padding is None else padding

    def forward(self, x):
        return C.depthwise2d(x, self.weight, self.bias, 1, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, output_padding=0):
        self.weight = parameter(uniform_init(rng, (c_in, c_out, k, k), c_out * k * k))
        self.bias = parameter(np.zeros(c_out))
        self.stride, self.padding, self.output_padding = stride, padding, output_padding

    def forward(self, x):
        return C.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding,
                                  self.output_padding)


class Conv3d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=None, bias=True):
        self.weight = parameter(uniform_init(rng, (c_out, c_in, k, k, k), c_in * k ** 3))
        self.bias = parameter(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.padding = k // 2 if padding is None else padding

    def forward(self, x):
        return C.conv3d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose3d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, output_padding=0):
        self.weight = parameter(uniform_init(rng, (c_in, c_out, k, k, k), c_out * k ** 3))
        self.bias = parameter(np.zeros(c_out))
        self.stride, self.padding, self.output_padding = stride, padding, output_padding

    def forward(self, x):
        return C.conv_transpose3d(x, self.weight, self.bias, self.stride, self.padding,
                                  self.output_padding)


class LayerNorm(Module):
    def __init__(self, dim):
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))

    def forward(self, x):
        return F.layer_norm(x, self.gain, self.bias)


class RMSNorm(Module):
    def __init__(self, dim):
        self.gain = parameter(np.ones(dim))

    def forward(self, x):
        return F.rms_norm(x, self.gain)
