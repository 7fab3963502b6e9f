"""Differentiable elementwise, reduction, shape and normalization ops."""

import numpy as np
from scipy.special import erf, expit

from .tensor import Function, Tensor, as_tensor, unbroadcast

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

RMS_EPS = 1e-6
LAYER_NORM_EPS = 1e-5


# ---------------------------------------------------------------- arithmetic

class _Add(Function):
    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, g):
        sa, sb = self.shapes
        return unbroadcast(g, sa), unbroadcast(g, sb)


class _Sub(Function):
    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, g):
        sa, sb = self.shapes
        return unbroadcast(g, sa), unbroadcast(-g, sb)


class _Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return unbroadcast(g * self.b, self.a.shape), unbroadcast(g * self.a, self.b.shape)


class _Div(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        ga = g / self.b
        gb = -g * self.a / (self.b * self.b)
        return unbroadcast(ga, self.a.shape), unbroadcast(gb, self.b.shape)


class _Scale(Function):
    def forward(self, a, factor):
        self.factor = factor
        return a * factor

    def backward(self, g):
        return (g * self.factor,)


class _Power(Function):
    def forward(self, a, exponent):
        self.a, self.p = a, exponent
        return a ** exponent

    def backward(self, g):
        return (g * self.p * self.a ** (self.p - 1),)


def add(a, b):
    return _Add.apply(a, b)


def sub(a, b):
    return _Sub.apply(a, b)


def mul(a, b):
    if np.isscalar(b):
        return _Scale.apply(a, factor=float(b))
    if np.isscalar(a):
        return _Scale.apply(b, factor=float(a))
    return _Mul.apply(a, b)


def div(a, b):
    if np.isscalar(b):
        return _Scale.apply(a, factor=1.0 / float(b))
    return _Div.apply(a, b)


def power(a, exponent):
    return _Power.apply(a, exponent=float(exponent))


# ---------------------------------------------------------------- reductions

class _Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g, self.shape).copy(),)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    if isinstance(axis, list):
        axis = tuple(axis)
    return _Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, (tuple, list)) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return _Scale.apply(sum(a, axis=axis, keepdims=keepdims), factor=1.0 / n)


# ---------------------------------------------------------------- shape ops

class _Reshape(Function):
    def forward(self, a, shape):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, g):
        return (g.reshape(self.shape),)


class _Transpose(Function):
    def forward(self, a, axes):
        self.axes = axes
        return np.ascontiguousarray(np.transpose(a, axes))

    def backward(self, g):
        return (np.ascontiguousarray(np.transpose(g, np.argsort(self.axes))),)


class _GetItem(Function):
    def forward(self, a, index):
        self.shape, self.index = a.shape, index
        return np.array(a[index])

    def backward(self, g):
        out = np.zeros(self.shape)
        np.add.at(out, self.index, g) if _has_advanced(self.index) else _assign_add(out, self.index, g)
        return (out,)


def _has_advanced(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _assign_add(out, index, g):
    out[index] += g


class _Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, self.splits, axis=self.axis))


def reshape(a, shape):
    return _Reshape.apply(a, shape=tuple(shape))


def transpose(a, axes):
    return _Transpose.apply(a, axes=tuple(axes))


def getitem(a, index):
    return _GetItem.apply(a, index=index)


def flip(a, axis):
    index = [slice(None)] * as_tensor(a).ndim
    index[axis] = slice(None, None, -1)
    return _GetItem.apply(a, index=tuple(index))


def concat(tensors, axis=0):
    return _Concat.apply(*tensors, axis=axis)


# ---------------------------------------------------------------- pointwise

class _Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, g):
        return (g * self.out,)


class _Softplus(Function):
    def forward(self, a):
        self.a = a
        return np.logaddexp(0.0, a)

    def backward(self, g):
        return (g * _sigmoid(self.a),)


class _Relu(Function):
    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0.0)

    def backward(self, g):
        return (g * self.mask,)


class _Silu(Function):
    def forward(self, a):
        self.a = a
        self.s = _sigmoid(a)
        return a * self.s

    def backward(self, g):
        s = self.s
        return (g * (s + self.a * s * (1.0 - s)),)


class _Gelu(Function):
    def forward(self, a):
        self.a = a
        self.cdf = 0.5 * (1.0 + erf(a / _SQRT2))
        return a * self.cdf

    def backward(self, g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * self.a * self.a)
        return (g * (self.cdf + self.a * pdf),)


_sigmoid = expit


def exp(a):
    return _Exp.apply(a)


def softplus(a):
    return _Softplus.apply(a)


def relu(a):
    return _Relu.apply(a)


def silu(a):
    return _Silu.apply(a)


def gelu(a):
    """Exact GELU, ``x * Phi(x)`` with the erf form of the normal CDF."""
    return _Gelu.apply(a)


# ---------------------------------------------------------------- softmax / norms

class _Softmax(Function):
    def forward(self, a, axis=-1):
        self.axis = axis
        z = a - a.max(axis=axis, keepdims=True)
        e = np.exp(z)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, g):
        p = self.out
        return (p * (g - (g * p).sum(axis=self.axis, keepdims=True)),)


def softmax(a, axis=-1):
    return _Softmax.apply(a, axis=axis)


class _LayerNorm(Function):
    def forward(self, x, gain, bias, eps):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        self.rstd = 1.0 / np.sqrt(var + eps)
        self.xhat = xc * self.rstd
        self.gain = gain
        return self.xhat * gain + bias

    def backward(self, g):
        n = self.xhat.shape[-1]
        red = tuple(range(g.ndim - 1))
        ggain = (g * self.xhat).sum(axis=red)
        gbias = g.sum(axis=red)
        gx_hat = g * self.gain
        gx = self.rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                          - self.xhat * (gx_hat * self.xhat).sum(axis=-1, keepdims=True) / n)
        return gx, ggain, gbias


class _RmsNorm(Function):
    def forward(self, x, gain, eps):
        ms = (x * x).mean(axis=-1, keepdims=True)
        self.rstd = 1.0 / np.sqrt(ms + eps)
        self.x, self.gain = x, gain
        return x * self.rstd * gain

    def backward(self, g):
        n = self.x.shape[-1]
        red = tuple(range(g.ndim - 1))
        ggain = (g * self.x * self.rstd).sum(axis=red)
        gx_hat = g * self.gain
        r = self.rstd
        gx = r * gx_hat - self.x * (r ** 3) * (gx_hat * self.x).sum(axis=-1, keepdims=True) / n
        return gx, ggain


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    """Normalize over the last axis, then scale and shift."""
    return _LayerNorm.apply(x, gain, bias, eps=eps)


def rms_norm(x, gain, eps=RMS_EPS):
    """``x / sqrt(mean(x**2) + eps) * gain`` over the last axis."""
    return _RmsNorm.apply(x, gain, eps=eps)


# ---------------------------------------------------------------- affine

class _Linear(Function):
    def forward(self, x, w, b):
        if x.shape[-1] != w.shape[1]:
            raise ValueError(
                f"linear: input shape {x.shape} does not match weight shape {w.shape} "
                f"(last input extent must equal weight input extent {w.shape[1]})")
        self.x, self.w = x, w
        return x @ w.T + b

    def backward(self, g):
        x2 = self.x.reshape(-1, self.x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        return g @ self.w, g2.T @ x2, g2.sum(axis=0)


class _LinearNoBias(Function):
    def forward(self, x, w):
        if x.shape[-1] != w.shape[1]:
            raise ValueError(
                f"linear: input shape {x.shape} does not match weight shape {w.shape}")
        self.x, self.w = x, w
        return x @ w.T

    def backward(self, g):
        x2 = self.x.reshape(-1, self.x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        return g @ self.w, g2.T @ x2


def linear(x, weight, bias=None):
    """Affine map of the trailing vector: ``x @ weight.T + bias``."""
    if bias is None:
        return _LinearNoBias.apply(x, weight)
    return _Linear.apply(x, weight, bias)


# ---------------------------------------------------------------- resampling

def interp_matrix(n_in, n_out, mode):
    """Dense [n_out, n_in] linear-interpolation weights along one axis.

    ``mode`` is the coordinate map from output index ``t`` to source position:
    ``"half_pixel"`` (t + 0.5) * n_in / n_out - 0.5, ``"align_corners"``
    t * (n_in - 1) / (n_out - 1), ``"asymmetric"`` t * n_in / n_out.
    Positions are clamped to [0, n_in - 1].
    """
    t = np.arange(n_out, dtype=np.float64)
    if mode == "half_pixel":
        src = (t + 0.5) * n_in / n_out - 0.5
    elif mode == "align_corners":
        src = t * (n_in - 1) / (n_out - 1) if n_out > 1 else np.zeros(1)
    elif mode == "asymmetric":
        src = t * n_in / n_out
    else:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), lo), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), hi), frac)
    return m


class _Resample(Function):
    def forward(self, a, matrix, axis):
        self.m, self.axis = matrix, axis
        out = np.tensordot(matrix, a, axes=([1], [axis]))
        return np.ascontiguousarray(np.moveaxis(out, 0, axis))

    def backward(self, g):
        out = np.tensordot(self.m.T, g, axes=([1], [self.axis]))
        return (np.ascontiguousarray(np.moveaxis(out, 0, self.axis)),)


def resize_axis(a, size, axis, mode="half_pixel"):
    """Linearly resample one axis of ``a`` to ``size`` entries."""
    a = as_tensor(a)
    m = interp_matrix(a.shape[axis], size, mode)
    return _Resample.apply(a, matrix=m, axis=axis % a.ndim)


__all__ = [
    "Tensor", "add", "sub", "mul", "div", "power", "sum", "mean", "reshape", "transpose",
    "getitem", "flip", "concat", "exp", "softplus", "relu", "silu", "gelu", "softmax",
    "layer_norm", "rms_norm", "linear", "interp_matrix", "resize_axis",
]
