"""Strided 3D correlation kernels: forward, weight adjoint, input adjoint.

All of them work on an already-padded input ``xp[B, C, D, H, W]`` and weights
``w[O, C, kd, kh, kw]``; 2D convolution runs through them with ``D = kd = 1``.
Loop order is fixed, so results depend on nothing but the inputs.

The numba forward keeps one output row of every channel (``acc[O, Wo]``) hot
while it sweeps the receptive field; the weight adjoint is the matching
blocked reduction. The numpy versions are im2col-style ``tensordot`` calls.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .._accel import njit_fast, use_numba


@njit_fast
def _corr_nb(xp, wt, sd, sh, sw, out):
    # wt is the kernel in [C, kd, kh, kw, O] layout
    B, C = xp.shape[0], xp.shape[1]
    kd, kh, kw, O = wt.shape[1], wt.shape[2], wt.shape[3], wt.shape[4]
    Do, Ho, Wo = out.shape[2], out.shape[3], out.shape[4]
    acc = np.zeros((O, Wo))
    for b in range(B):
        for d in range(Do):
            for h in range(Ho):
                acc[:] = 0.0
                for c in range(C):
                    for a in range(kd):
                        for p in range(kh):
                            xrow = xp[b, c, d * sd + a, h * sh + p]
                            for q in range(kw):
                                for o in range(O):
                                    wv = wt[c, a, p, q, o]
                                    if sw == 1:
                                        for k in range(Wo):
                                            acc[o, k] += wv * xrow[k + q]
                                    else:
                                        for k in range(Wo):
                                            acc[o, k] += wv * xrow[k * sw + q]
                for o in range(O):
                    for k in range(Wo):
                        out[b, o, d, h, k] = acc[o, k]
    return out


@njit_fast
def _wgrad_nb(xp, g, sd, sh, sw, gwt):
    # accumulates into gwt[C, kd, kh, kw, O]
    B, O = g.shape[0], g.shape[1]
    C, kd, kh, kw = gwt.shape[0], gwt.shape[1], gwt.shape[2], gwt.shape[3]
    Do, Ho, Wo = g.shape[2], g.shape[3], g.shape[4]
    for b in range(B):
        for d in range(Do):
            for h in range(Ho):
                for c in range(C):
                    for a in range(kd):
                        for p in range(kh):
                            xrow = xp[b, c, d * sd + a, h * sh + p]
                            for q in range(kw):
                                for o in range(O):
                                    grow = g[b, o, d, h]
                                    s = 0.0
                                    if sw == 1:
                                        for k in range(Wo):
                                            s += grow[k] * xrow[k + q]
                                    else:
                                        for k in range(Wo):
                                            s += grow[k] * xrow[k * sw + q]
                                    gwt[c, a, p, q, o] += s
    return gwt


@njit_fast
def _scatter_nb(g, w, sd, sh, sw, gxp):
    # for each target row, sums over output channels first, then scatters once per tap
    B, O = g.shape[0], g.shape[1]
    C, kd, kh, kw = w.shape[1], w.shape[2], w.shape[3], w.shape[4]
    Do, Ho, Wo = g.shape[2], g.shape[3], g.shape[4]
    tmp = np.zeros(Wo)
    for b in range(B):
        for d in range(Do):
            for h in range(Ho):
                for c in range(C):
                    for a in range(kd):
                        for p in range(kh):
                            xrow = gxp[b, c, d * sd + a, h * sh + p]
                            for q in range(kw):
                                tmp[:] = 0.0
                                for o in range(O):
                                    wv = w[o, c, a, p, q]
                                    grow = g[b, o, d, h]
                                    for k in range(Wo):
                                        tmp[k] += wv * grow[k]
                                if sw == 1:
                                    for k in range(Wo):
                                        xrow[k + q] += tmp[k]
                                else:
                                    for k in range(Wo):
                                        xrow[k * sw + q] += tmp[k]
    return gxp


def _windows(xp, ksize, stride):
    win = sliding_window_view(xp, ksize, axis=(2, 3, 4))
    sd, sh, sw = stride
    return win[:, :, ::sd, ::sh, ::sw]


def _corr_np(xp, w, stride, out_shape):
    win = _windows(xp, w.shape[2:], stride)
    Do, Ho, Wo = out_shape[2:]
    win = win[:, :, :Do, :Ho, :Wo]
    out = np.tensordot(win, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    return np.ascontiguousarray(np.moveaxis(out, 4, 1))


def _wgrad_np(xp, g, stride, ksize):
    win = _windows(xp, ksize, stride)
    Do, Ho, Wo = g.shape[2:]
    win = win[:, :, :Do, :Ho, :Wo]
    gw = np.tensordot(g, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return np.ascontiguousarray(gw)


def _scatter_np(g, w, stride, xp_shape):
    gxp = np.zeros(xp_shape)
    sd, sh, sw = stride
    Do, Ho, Wo = g.shape[2:]
    kd, kh, kw = w.shape[2:]
    for a in range(kd):
        for p in range(kh):
            for q in range(kw):
                contrib = np.tensordot(w[:, :, a, p, q], g, axes=([0], [1]))  # [C, B, ...]
                gxp[:, :, a:a + sd * (Do - 1) + 1:sd, p:p + sh * (Ho - 1) + 1:sh,
                    q:q + sw * (Wo - 1) + 1:sw] += np.moveaxis(contrib, 0, 1)
    return gxp


def _channels_last(w):
    return np.ascontiguousarray(np.moveaxis(w, 0, -1))


# The loop kernels beat im2col + BLAS only for unit stride with a narrow
# channel count (the 3D aggregation layers); wide or strided layers go to
# BLAS even when numba is enabled.
NUMBA_MAX_NARROW_CHANNELS = 8


def _loop_kernel(c_in, c_out, stride):
    return (use_numba() and tuple(stride) == (1, 1, 1)
            and min(c_in, c_out) <= NUMBA_MAX_NARROW_CHANNELS)


def corr_forward(xp, w, stride, out_shape):
    if _loop_kernel(w.shape[1], w.shape[0], stride):
        return _corr_nb(xp, _channels_last(w), 1, 1, 1, np.empty(out_shape))
    return _corr_np(xp, w, stride, out_shape)


def corr_weight_grad(xp, g, stride, ksize):
    if _loop_kernel(xp.shape[1], g.shape[1], stride):
        gwt = np.zeros((xp.shape[1],) + tuple(ksize) + (g.shape[1],))
        _wgrad_nb(xp, np.ascontiguousarray(g), 1, 1, 1, gwt)
        return np.ascontiguousarray(np.moveaxis(gwt, -1, 0))
    return _wgrad_np(xp, g, stride, ksize)


def corr_scatter(g, w, stride, xp_shape):
    """Adjoint of :func:`corr_forward` w.r.t. the padded input (full ``xp_shape``)."""
    if use_numba() and min(w.shape[0], w.shape[1]) <= NUMBA_MAX_NARROW_CHANNELS:
        return _scatter_nb(np.ascontiguousarray(g), w, stride[0], stride[1], stride[2],
                           np.zeros(xp_shape))
    return _scatter_np(g, w, stride, xp_shape)


def corr_input_grad(g, w, stride, padding, x_shape):
    """Gradient w.r.t. the unpadded input ``x[B, C, D, H, W]``.

    At unit stride this is the correlation of the upstream gradient, padded by
    ``k - 1 - p``, with the flipped kernel, so the padding rim is never computed.
    """
    ksize = w.shape[2:]
    if tuple(stride) == (1, 1, 1) and all(p < k for p, k in zip(padding, ksize)):
        rim = [(k - 1 - p, k - 1 - p) for k, p in zip(ksize, padding)]
        gp = np.pad(g, [(0, 0), (0, 0)] + rim)
        wf = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].swapaxes(0, 1))
        return corr_forward(gp, wf, (1, 1, 1), tuple(x_shape))
    xp_shape = tuple(x_shape[:2]) + tuple(n + 2 * p for n, p in zip(x_shape[2:], padding))
    gxp = corr_scatter(g, w, stride, xp_shape)
    (pd, ph, pw), (D, H, W) = padding, xp_shape[2:]
    return np.ascontiguousarray(gxp[:, :, pd:D - pd, ph:H - ph, pw:W - pw])
