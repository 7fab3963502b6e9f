"""Batched scalar-decay selective scan and its adjoint.

Shapes: ``A[G, S, P]`` per-position decay per channel, ``B, C[G, S, N]``
shared across channels, ``x[G, S, P]``. ``order[K, S]`` lists the positions
in traversal order; sequence ``g`` follows ``order[g % K]``, so a 2D map
stored row-major can be scanned in any direction without copying it into
sequence order. Writing ``s_t = order[g % K, t]``, for every (g, p)::

    h_t = A[s_t] h_{t-1} + B[s_t] x[s_t],  h_{-1} = 0,  y[s_t] = C[s_t] . h_t

The forward keeps every state ``hs[G, S, P, N]`` (indexed by step) for the
adjoint.
"""

import numpy as np

from .._accel import njit, use_numba


@njit
def _scan_fwd_nb(A, B, C, x, order, hs, y):
    G, T, P = x.shape
    N = B.shape[2]
    K = order.shape[0]
    for g in range(G):
        k = g % K
        for p in range(P):
            for t in range(T):
                s = order[k, t]
                a = A[g, s, p]
                xv = x[g, s, p]
                acc = 0.0
                for n in range(N):
                    prev = hs[g, t - 1, p, n] if t > 0 else 0.0
                    h = a * prev + B[g, s, n] * xv
                    hs[g, t, p, n] = h
                    acc += C[g, s, n] * h
                y[g, s, p] = acc


@njit
def _scan_bwd_nb(A, B, C, x, order, hs, gy, dA, dB, dC, dx):
    G, T, P = x.shape
    N = B.shape[2]
    K = order.shape[0]
    dh = np.zeros(N)
    for g in range(G):
        k = g % K
        for p in range(P):
            for n in range(N):
                dh[n] = 0.0
            for t in range(T - 1, -1, -1):
                s = order[k, t]
                gv = gy[g, s, p]
                a_next = A[g, order[k, t + 1], p] if t + 1 < T else 0.0
                xv = x[g, s, p]
                sa = 0.0
                sx = 0.0
                for n in range(N):
                    d = gv * C[g, s, n] + a_next * dh[n]
                    dh[n] = d
                    dC[g, s, n] += gv * hs[g, t, p, n]
                    if t > 0:
                        sa += d * hs[g, t - 1, p, n]
                    dB[g, s, n] += d * xv
                    sx += d * B[g, s, n]
                dA[g, s, p] = sa
                dx[g, s, p] = sx


def _gather(v, order):
    """[G, S, F] in position layout -> [G, T, F] in traversal order."""
    G, S, Fd = v.shape
    K = order.shape[0]
    v = v.reshape(G // K, K, S, Fd)
    return v[:, np.arange(K)[:, None], order].reshape(G, S, Fd)


def _scatter(v, order):
    G, T, Fd = v.shape
    K = order.shape[0]
    out = np.empty((G // K, K, T, Fd))
    out[:, np.arange(K)[:, None], order] = v.reshape(G // K, K, T, Fd)
    return out.reshape(G, T, Fd)


def _scan_fwd_np(A, B, C, x, order):
    A, B, C, x = (_gather(v, order) for v in (A, B, C, x))
    G, T, P = x.shape
    N = B.shape[2]
    hs = np.empty((G, T, P, N))
    h = np.zeros((G, P, N))
    for t in range(T):
        h = A[:, t, :, None] * h + x[:, t, :, None] * B[:, t, None, :]
        hs[:, t] = h
    y = np.einsum("gtpn,gtn->gtp", hs, C)
    return hs, _scatter(y, order)


def _scan_bwd_np(A, B, C, x, order, hs, gy):
    A, B, C, x, gy = (_gather(v, order) for v in (A, B, C, x, gy))
    G, T, P = x.shape
    N = B.shape[2]
    dA = np.zeros_like(A)
    dB = np.zeros_like(B)
    dC = np.einsum("gtp,gtpn->gtn", gy, hs)
    dx = np.zeros_like(x)
    dh = np.zeros((G, P, N))
    for t in range(T - 1, -1, -1):
        a_next = A[:, t + 1, :, None] if t + 1 < T else 0.0
        dh = gy[:, t, :, None] * C[:, t, None, :] + a_next * dh
        if t > 0:
            dA[:, t] = (dh * hs[:, t - 1]).sum(axis=-1)
        dB[:, t] = (dh * x[:, t, :, None]).sum(axis=1)
        dx[:, t] = (dh * B[:, t, None, :]).sum(axis=-1)
    return tuple(_scatter(v, order) for v in (dA, dB, dC, dx))


def identity_order(T):
    return np.arange(T, dtype=np.int64)[None]


def scan_forward(A, B, C, x, order):
    """Return ``(hs, y)``; inputs must be C-contiguous float64."""
    if use_numba():
        G, T, P = x.shape
        hs = np.empty((G, T, P, B.shape[2]))
        y = np.empty((G, T, P))
        _scan_fwd_nb(A, B, C, x, order, hs, y)
        return hs, y
    return _scan_fwd_np(A, B, C, x, order)


def scan_backward(A, B, C, x, order, hs, gy):
    """Return ``(dA, dB, dC, dx)`` given the upstream gradient ``gy``."""
    if use_numba():
        dA = np.zeros_like(A)
        dB = np.zeros_like(B)
        dC = np.zeros_like(C)
        dx = np.zeros_like(x)
        _scan_bwd_nb(A, B, C, x, order, hs, np.ascontiguousarray(gy), dA, dB, dC, dx)
        return dA, dB, dC, dx
    return _scan_bwd_np(A, B, C, x, order, hs, gy)
