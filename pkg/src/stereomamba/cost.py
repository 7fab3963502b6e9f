"""Multi-scale feature fusion and the group-wise correlation cost volume.

Disparity convention: left pixel ``(x, y)`` matches right pixel ``(x - d, y)``.
Entries whose match falls left of the frame (``x < d``) are zero.
"""

import numpy as np

from ._accel import njit, use_numba
from .autodiff import functional as F
from .autodiff.nn import Conv2d, ConvTranspose2d, Module
from .autodiff.tensor import Function, Tensor, as_tensor


class MFF(Module):
    """Coarse-to-fine fusion f3 -> f2 -> f1, then concatenation with f4."""

    def __init__(self, c1, c2, c3, c4, rng, fused=48):
        u3 = max(1, c3 // 2)
        self.up3 = ConvTranspose2d(c3, u3, 4, rng, stride=2, padding=1)
        u2 = max(1, (u3 + c2) // 2)
        self.up2 = ConvTranspose2d(u3 + c2, u2, 4, rng, stride=2, padding=1)
        self.merge = Conv2d(u2 + c1, fused, 3, rng, padding=1)
        self.out_channels = fused + c4

    def forward(self, f1, f2, f3, f4):
        for lo, hi, name in ((f3, f2, "f3/f2"), (f2, f1, "f2/f1")):
            if 2 * lo.shape[2] != hi.shape[2] or 2 * lo.shape[3] != hi.shape[3]:
                raise ValueError(f"pyramid {name} shapes {lo.shape} / {hi.shape} are not 2x apart")
        if f4.shape[2:] != f1.shape[2:]:
            raise ValueError(f"f4 shape {f4.shape} does not match f1 shape {f1.shape}")
        x = F.relu(self.up3(f3))
        x = F.relu(self.up2(F.concat([x, f2], axis=1)))
        x = F.relu(self.merge(F.concat([x, f1], axis=1)))
        return F.concat([x, f4], axis=1)


@njit
def _gwc_fwd_nb(L, R, ng, out):
    B, C, H, W = L.shape
    cpg = C // ng
    D = out.shape[2]
    for b in range(B):
        for g in range(ng):
            for d in range(D):
                for y in range(H):
                    for x in range(d, W):
                        s = 0.0
                        for c in range(g * cpg, (g + 1) * cpg):
                            s += L[b, c, y, x] * R[b, c, y, x - d]
                        out[b, g, d, y, x] = s / cpg


@njit
def _gwc_bwd_nb(L, R, ng, g, gL, gR):
    B, C, H, W = L.shape
    cpg = C // ng
    D = g.shape[2]
    inv = 1.0 / cpg
    for b in range(B):
        for gi in range(ng):
            for d in range(D):
                for y in range(H):
                    for x in range(d, W):
                        v = g[b, gi, d, y, x] * inv
                        for c in range(gi * cpg, (gi + 1) * cpg):
                            gL[b, c, y, x] += v * R[b, c, y, x - d]
                            gR[b, c, y, x - d] += v * L[b, c, y, x]


def _gwc_fwd_np(L, R, ng, D):
    B, C, H, W = L.shape
    out = np.zeros((B, ng, D, H, W))
    for d in range(min(D, W)):
        prod = L[..., d:] * R[..., :W - d]
        out[:, :, d, :, d:] = prod.reshape(B, ng, C // ng, H, W - d).mean(axis=2)
    return out


def _gwc_bwd_np(L, R, ng, g):
    B, C, H, W = L.shape
    cpg = C // ng
    gL = np.zeros_like(L)
    gR = np.zeros_like(R)
    for d in range(min(g.shape[2], W)):
        gd = np.repeat(g[:, :, d, :, d:], cpg, axis=1) / cpg
        gL[..., d:] += gd * R[..., :W - d]
        gR[..., :W - d] += gd * L[..., d:]
    return gL, gR


class _GwcVolume(Function):
    def forward(self, L, R, disparities, groups):
        self.L, self.R, self.ng = np.ascontiguousarray(L), np.ascontiguousarray(R), groups
        if use_numba():
            B, _, H, W = L.shape
            out = np.zeros((B, groups, disparities, H, W))
            _gwc_fwd_nb(self.L, self.R, groups, out)
            return out
        return _gwc_fwd_np(self.L, self.R, groups, disparities)

    def backward(self, g):
        if use_numba():
            gL = np.zeros_like(self.L)
            gR = np.zeros_like(self.R)
            _gwc_bwd_nb(self.L, self.R, self.ng, np.ascontiguousarray(g), gL, gR)
            return gL, gR
        return _gwc_bwd_np(self.L, self.R, self.ng, g)


def _check_volume_args(left, right, disparities, groups):
    if left.shape != right.shape:
        raise ValueError(f"left features {left.shape} and right features {right.shape} differ")
    channels = left.shape[-3]
    if groups < 1 or channels % groups:
        raise ValueError(f"{channels} channels cannot be split evenly into {groups} groups")
    if disparities < 1:
        raise ValueError(f"need at least one disparity level, got {disparities}")


def build_gwc_volume(fg_left, fg_right, disparities, groups):
    """Group-wise correlation volume ``[B, groups, disparities, H, W]`` (taped).

    Unbatched ``[C, H, W]`` features give ``[groups, disparities, H, W]``.
    """
    fg_left, fg_right = as_tensor(fg_left), as_tensor(fg_right)
    _check_volume_args(fg_left, fg_right, disparities, groups)
    unbatched = fg_left.ndim == 3
    if unbatched:
        fg_left = fg_left.reshape((1,) + fg_left.shape)
        fg_right = fg_right.reshape((1,) + fg_right.shape)
    vol = _GwcVolume.apply(fg_left, fg_right, disparities=int(disparities), groups=int(groups))
    return vol.reshape(vol.shape[1:]) if unbatched else vol


def gwc_volume_oracle(fg_left, fg_right, disparities, groups):
    """Explicit nested loops, no vectorization; verification only."""
    L = fg_left.data if isinstance(fg_left, Tensor) else np.asarray(fg_left, dtype=np.float64)
    R = fg_right.data if isinstance(fg_right, Tensor) else np.asarray(fg_right, dtype=np.float64)
    _check_volume_args(L, R, disparities, groups)
    unbatched = L.ndim == 3
    if unbatched:
        L, R = L[None], R[None]
    B, C, H, W = L.shape
    cpg = C // groups
    out = np.zeros((B, groups, disparities, H, W))
    for b in range(B):
        for i in range(groups):
            for d in range(disparities):
                for y in range(H):
                    for x in range(W):
                        if x - d < 0:
                            continue
                        acc = 0.0
                        for c in range(i * cpg, (i + 1) * cpg):
                            acc += float(L[b, c, y, x]) * float(R[b, c, y, x - d])
                        out[b, i, d, y, x] = acc / cpg
    return out[0] if unbatched else out
