"""Feature extraction: stem, SS2D/VSS self-attention backbone, stereo cross-attention.

Token tensors inside the blocks are channel-last ``[B, H, W, C]``; pyramid
outputs are channel-first ``[B, C, H, W]`` for the fusion convolutions.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import (Conv2d, DepthwiseConv2d, LayerNorm, Linear, Module, RMSNorm,
                          parameter)
from .ssm.core import selective_scan

DIRECTIONS = ("row", "row_reverse", "col", "col_reverse")


@dataclass
class BackboneConfig:
    c0: int = 16
    c1: int = 16
    c2: int = 32
    c3: int = 64
    c4: int = 16
    vss_blocks: tuple = (2, 2, 2, 2)
    state_dim: int = 8
    ffn_expansion: int = 2
    seed: int = 0

    def __post_init__(self):
        self.vss_blocks = tuple(int(b) for b in self.vss_blocks)
        vals = (self.c0, self.c1, self.c2, self.c3, self.c4, self.state_dim, self.ffn_expansion)
        if any(v < 1 for v in vals) or len(self.vss_blocks) != 4 or min(self.vss_blocks) < 0:
            raise ValueError(f"invalid backbone config: {self}")


@dataclass
class FeaturePyramid:
    f0: object
    f1: object
    f2: object
    f3: object
    f4: object
    side: str = "left"

    def as_list(self):
        return [self.f0, self.f1, self.f2, self.f3, self.f4]


def check_image_size(H, W, multiple=16):
    if H % multiple or W % multiple:
        raise ValueError(f"image size {H}x{W} must be a multiple of {multiple} in both dimensions")


def to_tokens(x):
    return x.transpose(0, 2, 3, 1)


def to_channels(x):
    return x.transpose(0, 3, 1, 2)


def direction_orders(H, W):
    """Row-major positions in traversal order, one row per entry of ``DIRECTIONS``."""
    rows = np.arange(H * W, dtype=np.int64)
    cols = rows.reshape(H, W).T.ravel()
    return np.stack([rows, rows[::-1], cols, cols[::-1]])


class SS2D(Module):
    """Four-direction selective scan over a 2D token map.

    One projection produces the (delta, B, C) heads of all four directions;
    the scan reads the row-major map in each direction's order, so no
    flattened copies are made.
    """

    def __init__(self, channels, state_dim, out_dim, rng):
        self.P, self.N = channels, state_dim
        self.width = channels + 2 * state_dim
        self.x_proj = Linear(channels, len(DIRECTIONS) * self.width, rng)
        self.a_log = parameter(np.log(np.expm1(np.linspace(0.5, 2.0, channels)))[None].repeat(4, 0))
        self.out_norm = LayerNorm(channels)
        self.out_proj = Linear(channels, out_dim, rng)

    def scan_inputs(self, u):
        """(A, B, C, x) of every direction, each ``[B, 4, H*W, .]`` in row-major order."""
        Bn, H, W, P = u.shape
        N, S = self.N, H * W
        proj = self.x_proj(u).reshape((Bn, S, 4, self.width)).transpose(0, 2, 1, 3)
        delta = F.softplus(proj[..., :P])
        A = F.exp(delta * (-1.0 * F.softplus(self.a_log)).reshape((1, 4, 1, P)))
        return A, proj[..., P:P + N], proj[..., P + N:], delta * u.reshape((Bn, 1, S, P))

    def directional_outputs(self, u):
        """Per-direction scan outputs ``[B, 4, H, W, P]``."""
        Bn, H, W, P = u.shape
        G, S, N = 4 * Bn, H * W, self.N
        A, Bm, Cm, x = self.scan_inputs(u)
        y = selective_scan(A.reshape((G, S, P)), Bm.reshape((G, S, N)), Cm.reshape((G, S, N)),
                           x.reshape((G, S, P)), order=direction_orders(H, W))
        return y.reshape((Bn, 4, H, W, P))

    def forward(self, u):
        y = self.directional_outputs(u).sum(axis=1)
        return self.out_proj(self.out_norm(y))


class VSSBlock(Module):
    def __init__(self, dim, state_dim, ffn_expansion, rng):
        self.norm1 = LayerNorm(dim)
        self.in_proj = Linear(dim, dim, rng)
        self.dwconv = DepthwiseConv2d(dim, 3, rng)
        self.ss2d = SS2D(dim, state_dim, dim, rng)
        self.norm2 = LayerNorm(dim)
        self.ffn_in = Linear(dim, ffn_expansion * dim, rng)
        self.ffn_out = Linear(ffn_expansion * dim, dim, rng)

    def forward(self, f):
        h = self.in_proj(self.norm1(f))
        h = to_tokens(self.dwconv(to_channels(h)))
        f = f + self.ss2d(F.silu(h))
        return f + self.ffn_out(F.gelu(self.ffn_in(self.norm2(f))))


class Downsample(Module):
    def __init__(self, c_in, c_out, rng):
        self.conv = Conv2d(c_in, c_out, 3, rng, stride=2, padding=1)
        self.norm = LayerNorm(c_out)

    def forward(self, f):
        return self.norm(to_tokens(self.conv(to_channels(f))))


class SelfAttentionBackbone(Module):
    """Four VSS stages; only the first two transitions downsample."""

    def __init__(self, cfg, rng):
        n = cfg.vss_blocks
        mk = lambda dim, count: [VSSBlock(dim, cfg.state_dim, cfg.ffn_expansion, rng)
                                 for _ in range(count)]
        self.proj_in = Linear(cfg.c0, cfg.c1, rng) if cfg.c0 != cfg.c1 else None
        self.stage1 = mk(cfg.c1, n[0])
        self.down2 = Downsample(cfg.c1, cfg.c2, rng)
        self.stage2 = mk(cfg.c2, n[1])
        self.down3 = Downsample(cfg.c2, cfg.c3, rng)
        self.stage3 = mk(cfg.c3, n[2])
        self.stage4 = mk(cfg.c3, n[3])

    def forward(self, f0):
        h, w = f0.shape[2:]
        if h < 4 or w < 4:
            raise ValueError(f"feature map {h}x{w} too small for two stride-2 downsamples")
        x = to_tokens(f0)
        if self.proj_in is not None:
            x = self.proj_in(x)
        for blk in self.stage1:
            x = blk(x)
        f1 = x
        x = self.down2(x)
        for blk in self.stage2:
            x = blk(x)
        f2 = x
        x = self.down3(x)
        for blk in self.stage3 + self.stage4:
            x = blk(x)
        return to_channels(f1), to_channels(f2), to_channels(x)


class CrossAttention(Module):
    """Stereo cross-attention: each side's scan reads the other side's B and x.

    ``Y_l = scan(A_l, B_r, C_l, delta_l * x_r)`` over row-major forward and
    reverse traversals (summed), then ``f4 = out(rms_norm(Y * gelu(gate(f0))))``.
    """

    def __init__(self, c0, c4, state_dim, rng):
        P = self.P = c4
        self.N = state_dim
        self.in_proj = Linear(c0, P, rng)
        self.dwconv = DepthwiseConv2d(P, 3, rng)
        self.x_head = Linear(P, P, rng)
        self.ssm_head = Linear(P, P + 2 * state_dim, rng)
        self.a_log = parameter(np.log(np.expm1(np.linspace(0.5, 2.0, P))))
        self.gate = Linear(c0, P, rng)
        self.norm = RMSNorm(P)
        self.out_proj = Linear(P, c4, rng)

    def heads(self, f0):
        """(A, B, C, delta, x) token maps ``[B, h, w, .]``."""
        u = F.silu(to_tokens(self.dwconv(to_channels(self.in_proj(to_tokens(f0))))))
        proj = self.ssm_head(u)
        P, N = self.P, self.N
        delta = F.softplus(proj[..., :P])
        A = F.exp(delta * (-1.0 * F.softplus(self.a_log)))
        return A, proj[..., P:P + N], proj[..., P + N:], delta, self.x_head(u)

    def paired(self, f0):
        """``f0`` stacks left then right views ``[2B, c0, h, w]``; returns f4 stacked the same way."""
        B2, _, h, w = f0.shape
        if B2 % 2:
            raise ValueError(f"cross-attention expects stacked left/right views, got batch {B2}")
        Bn, S, P, N = B2 // 2, h * w, self.P, self.N
        A, Bm, Cm, delta, xv = self.heads(f0)
        swap = lambda t: F.concat([t[Bn:], t[:Bn]], axis=0)
        inputs = (A, swap(Bm), Cm, delta * swap(xv))

        def both_directions(t):
            t = t.reshape((B2, 1, S, t.shape[-1]))
            return F.concat([t, t], axis=1).reshape((2 * B2, S, t.shape[-1]))

        y = selective_scan(*[both_directions(t) for t in inputs], order=direction_orders(h, w)[:2])
        Y = y.reshape((B2, 2, h, w, P)).sum(axis=1)
        g = F.gelu(self.gate(to_tokens(f0)))
        return to_channels(self.out_proj(self.norm(Y * g)))

    def forward(self, f0_left, f0_right):
        if f0_left.shape != f0_right.shape:
            raise ValueError(
                f"cross-attention: left shape {f0_left.shape} != right shape {f0_right.shape}")
        Bn = f0_left.shape[0]
        f4 = self.paired(F.concat([f0_left, f0_right], axis=0))
        return f4[:Bn], f4[Bn:]


class FEMamba(Module):
    """Stem + self-attention backbone + cross-attention, shared by both views.

    Both views go through the layers as one stacked batch (left first).
    """

    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.stem = Conv2d(3, cfg.c0, 4, rng, stride=4)
        self.backbone = SelfAttentionBackbone(cfg, rng)
        self.cross = CrossAttention(cfg.c0, cfg.c4, cfg.state_dim, rng)

    def stem_embed(self, image):
        check_image_size(*image.shape[-2:])
        return self.stem(image)

    def single(self, image):
        f0 = self.stem_embed(image)
        return f0, self.backbone(f0)

    def paired(self, left, right, need_cross=True):
        """Pyramid over the stacked batch ``[left; right]``."""
        if left.shape != right.shape:
            raise ValueError(f"left image {left.shape} and right image {right.shape} differ")
        f0 = self.stem_embed(F.concat([left, right], axis=0))
        f1, f2, f3 = self.backbone(f0)
        f4 = self.cross.paired(f0) if need_cross else None
        return FeaturePyramid(f0, f1, f2, f3, f4, "both")

    def forward(self, left, right, need_cross=True):
        return split_pyramid(self.paired(left, right, need_cross))


def split_pyramid(pyr):
    """Stacked ``[left; right]`` pyramid -> (left pyramid, right pyramid)."""
    Bn = pyr.f0.shape[0] // 2
    parts = [(None, None) if f is None else (f[:Bn], f[Bn:]) for f in pyr.as_list()]
    return (FeaturePyramid(*[p[0] for p in parts], side="left"),
            FeaturePyramid(*[p[1] for p in parts], side="right"))


class PlainCNN(Module):
    """Convolutional stand-in backbone with the same /4, /8, /16 outputs."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.stem = Conv2d(3, cfg.c0, 4, rng, stride=4)
        self.stage1 = Conv2d(cfg.c0, cfg.c1, 3, rng, padding=1)
        self.stage2 = Conv2d(cfg.c1, cfg.c2, 3, rng, stride=2, padding=1)
        self.stage3 = Conv2d(cfg.c2, cfg.c3, 3, rng, stride=2, padding=1)
        self.stage4 = Conv2d(cfg.c3, cfg.c3, 3, rng, padding=1)
        self.cross = Conv2d(cfg.c0, cfg.c4, 3, rng, padding=1)

    def paired(self, left, right, need_cross=True):
        if left.shape != right.shape:
            raise ValueError(f"left image {left.shape} and right image {right.shape} differ")
        image = F.concat([left, right], axis=0)
        check_image_size(*image.shape[-2:])
        f0 = self.stem(image)
        f1 = F.relu(self.stage1(f0))
        f2 = F.relu(self.stage2(f1))
        f3 = F.relu(self.stage4(F.relu(self.stage3(f2))))
        f4 = F.relu(self.cross(f0)) if need_cross else None
        return FeaturePyramid(f0, f1, f2, f3, f4, "both")

    def forward(self, left, right, need_cross=True):
        return split_pyramid(self.paired(left, right, need_cross))
