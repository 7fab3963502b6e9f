"""Convolution family: conv2d, depthwise2d, transpose2d, conv3d, transpose3d.

Layouts are channel-first with a leading batch axis: ``[B, C, H, W]`` or
``[B, C, D, H, W]``. Weights follow the usual conventions: ``[O, C, k...]``
for convolutions, ``[C_in, C_out, k...]`` for transposed convolutions and
``[C, 1, kh, kw]`` for depthwise.
"""

import numpy as np

from ._conv_kernels import corr_forward, corr_input_grad, corr_scatter, corr_weight_grad
from .tensor import Function, Tensor, as_tensor


def _tuple(v, n):
    if np.isscalar(v):
        return (int(v),) * n
    v = tuple(int(i) for i in v)
    if len(v) != n:
        raise ValueError(f"expected {n} values, got {v}")
    return v


def _to3(stride, padding, dims):
    s, p = _tuple(stride, dims), _tuple(padding, dims)
    if any(i < 1 for i in s):
        raise ValueError(f"strides must be >= 1, got {s}")
    if any(i < 0 for i in p):
        raise ValueError(f"padding must be >= 0, got {p}")
    if dims == 2:
        s, p = (1,) + s, (0,) + p
    return s, p


def _out_extent(n, k, s, p, what, xshape, wshape):
    o = (n + 2 * p - k) // s + 1
    if n + 2 * p < k or o < 1:
        raise ValueError(
            f"{what}: input shape {xshape} with kernel shape {wshape} gives an empty output")
    return o


class _Conv(Function):
    def forward(self, x, w, b=None, *, stride, padding, dims):
        name = "conv2d" if dims == 2 else "conv3d"
        if x.ndim != dims + 2 or w.ndim != dims + 2 or x.shape[1] != w.shape[1]:
            raise ValueError(
                f"{name}: input shape {x.shape} incompatible with kernel shape {w.shape}")
        self.dims, self.xshape = dims, x.shape
        if dims == 2:
            x, w = x[:, :, None], w[:, :, None]
        pads = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)
        xp = np.ascontiguousarray(np.pad(x, pads))
        out_sp = tuple(_out_extent(n, k, s, p, name, self.xshape, w.shape)
                       for n, k, s, p in zip(x.shape[2:], w.shape[2:], stride, padding))
        out = corr_forward(xp, np.ascontiguousarray(w), stride, (x.shape[0], w.shape[0]) + out_sp)
        self.xp, self.w, self.stride, self.padding = xp, np.ascontiguousarray(w), stride, padding
        if b is not None:
            out += b.reshape(1, -1, 1, 1, 1)
        return out[:, :, 0] if dims == 2 else out

    def backward(self, g):
        if self.dims == 2:
            g = g[:, :, None]
        gw = corr_weight_grad(self.xp, g, self.stride, self.w.shape[2:])
        gx = None
        if self.needs_input_grad[0]:
            x_shape = self.xshape[:2] + (1,) * (self.dims == 2) + self.xshape[2:]
            gx = corr_input_grad(np.ascontiguousarray(g), self.w, self.stride, self.padding, x_shape)
        gb = g.sum(axis=(0, 2, 3, 4))
        if self.dims == 2:
            gx = None if gx is None else gx[:, :, 0]
            gw = gw[:, :, 0]
        grads = (gx, gw)
        return grads + (gb,) if len(self.inputs) == 3 else grads


class _ConvTranspose(Function):
    def forward(self, x, w, b=None, *, stride, padding, output_padding, dims):
        name = "transpose2d" if dims == 2 else "transpose3d"
        if x.ndim != dims + 2 or w.ndim != dims + 2 or x.shape[1] != w.shape[0]:
            raise ValueError(
                f"{name}: input shape {x.shape} incompatible with kernel shape {w.shape}")
        self.dims, self.xshape = dims, x.shape
        if dims == 2:
            x, w = x[:, :, None], w[:, :, None]
        out_sp, buf_sp = [], []
        for n, k, s, p, op in zip(x.shape[2:], w.shape[2:], stride, padding, output_padding):
            if op >= s and s > 1 or op < 0:
                raise ValueError(f"{name}: output_padding {op} must be in [0, stride)")
            o = (n - 1) * s - 2 * p + k + op
            if o < 1:
                raise ValueError(
                    f"{name}: input shape {self.xshape} with kernel shape {w.shape} gives an empty output")
            out_sp.append(o)
            buf_sp.append(max((n - 1) * s + k, p + o))
        self.x, self.w = np.ascontiguousarray(x), np.ascontiguousarray(w)
        self.stride, self.padding, self.out_sp = stride, padding, tuple(out_sp)
        self.buf_shape = (x.shape[0], w.shape[1]) + tuple(buf_sp)
        buf = corr_scatter(self.x, self.w, stride, self.buf_shape)
        out = buf[:, :, padding[0]:padding[0] + out_sp[0], padding[1]:padding[1] + out_sp[1],
                  padding[2]:padding[2] + out_sp[2]]
        out = np.ascontiguousarray(out)
        if b is not None:
            out += b.reshape(1, -1, 1, 1, 1)
        return out[:, :, 0] if dims == 2 else out

    def backward(self, g):
        if self.dims == 2:
            g = g[:, :, None]
        p, o = self.padding, self.out_sp
        gbuf = np.zeros(self.buf_shape)
        gbuf[:, :, p[0]:p[0] + o[0], p[1]:p[1] + o[1], p[2]:p[2] + o[2]] = g
        gx = corr_forward(gbuf, self.w, self.stride, self.x.shape)
        gw = corr_weight_grad(gbuf, self.x, self.stride, self.w.shape[2:])
        gb = g.sum(axis=(0, 2, 3, 4))
        if self.dims == 2:
            gx, gw = gx[:, :, 0], gw[:, :, 0]
        grads = (gx, gw)
        return grads + (gb,) if len(self.inputs) == 3 else grads


class _Depthwise2d(Function):
    def forward(self, x, w, b=None, *, stride, padding):
        if x.ndim != 4 or w.ndim != 4 or w.shape[1] != 1 or x.shape[1] != w.shape[0]:
            raise ValueError(
                f"depthwise2d: input shape {x.shape} incompatible with kernel shape {w.shape}")
        (sh, sw), (ph, pw) = stride, padding
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        kh, kw = w.shape[2:]
        Ho = _out_extent(x.shape[2], kh, sh, ph, "depthwise2d", x.shape, w.shape)
        Wo = _out_extent(x.shape[3], kw, sw, pw, "depthwise2d", x.shape, w.shape)
        out = np.zeros((x.shape[0], x.shape[1], Ho, Wo))
        for p in range(kh):
            for q in range(kw):
                out += w[None, :, 0, p, q, None, None] * xp[:, :, p:p + sh * (Ho - 1) + 1:sh,
                                                            q:q + sw * (Wo - 1) + 1:sw]
        if b is not None:
            out += b.reshape(1, -1, 1, 1)
        self.xp, self.w, self.stride, self.padding = xp, w, stride, padding
        return out

    def backward(self, g):
        (sh, sw), (ph, pw) = self.stride, self.padding
        kh, kw = self.w.shape[2:]
        Ho, Wo = g.shape[2:]
        gxp = np.zeros_like(self.xp)
        gw = np.zeros_like(self.w)
        for p in range(kh):
            for q in range(kw):
                sl = (slice(None), slice(None), slice(p, p + sh * (Ho - 1) + 1, sh),
                      slice(q, q + sw * (Wo - 1) + 1, sw))
                gw[:, 0, p, q] = (g * self.xp[sl]).sum(axis=(0, 2, 3))
                gxp[sl] += self.w[None, :, 0, p, q, None, None] * g
        H, W = gxp.shape[2:]
        gx = np.ascontiguousarray(gxp[:, :, ph:H - ph, pw:W - pw])
        grads = (gx, gw)
        return grads + (g.sum(axis=(0, 2, 3)),) if len(self.inputs) == 3 else grads


def _apply(cls, x, w, b, **kw):
    if b is None:
        return cls.apply(x, w, **kw)
    return cls.apply(x, w, b, **kw)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    s, p = _to3(stride, padding, 2)
    return _apply(_Conv, x, weight, bias, stride=s, padding=p, dims=2)


def conv3d(x, weight, bias=None, stride=1, padding=0):
    s, p = _to3(stride, padding, 3)
    return _apply(_Conv, x, weight, bias, stride=s, padding=p, dims=3)


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0, output_padding=0):
    s, p = _to3(stride, padding, 2)
    op = (0,) + _tuple(output_padding, 2)
    return _apply(_ConvTranspose, x, weight, bias, stride=s, padding=p, output_padding=op, dims=2)


def conv_transpose3d(x, weight, bias=None, stride=1, padding=0, output_padding=0):
    s, p = _to3(stride, padding, 3)
    return _apply(_ConvTranspose, x, weight, bias, stride=s, padding=p,
                  output_padding=_tuple(output_padding, 3), dims=3)


def depthwise2d(x, weight, bias=None, stride=1, padding=0):
    s, p = _tuple(stride, 2), _tuple(padding, 2)
    if any(i < 1 for i in s):
        raise ValueError(f"strides must be >= 1, got {s}")
    return _apply(_Depthwise2d, x, weight, bias, stride=s, padding=p)


_MODES = {
    "conv2d": conv2d,
    "depthwise2d": depthwise2d,
    "transpose2d": conv_transpose2d,
    "conv3d": conv3d,
    "transpose3d": conv_transpose3d,
}


def conv_family(x, kernel, mode, stride=1, padding=0, bias=None, **kwargs):
    """Dispatch to one member of the convolution family by name.

    Unbatched inputs (``[C, H, W]`` / ``[C, D, H, W]``) get a batch axis of 1
    that is removed again from the result.
    """
    if mode not in _MODES:
        raise ValueError(f"unknown convolution mode {mode!r}; expected one of {sorted(_MODES)}")
    x = as_tensor(x)
    spatial = 3 if mode.endswith("3d") else 2
    unbatched = x.ndim == spatial + 1
    if unbatched:
        x = x.reshape((1,) + x.shape)
    out = _MODES[mode](x, kernel, bias, stride=stride, padding=padding, **kwargs)
    return out.reshape(out.shape[1:]) if unbatched else out


__all__ = ["conv2d", "conv3d", "conv_transpose2d", "conv_transpose3d", "depthwise2d",
           "conv_family", "Tensor"]
