"""End-to-end network: features -> fused features -> volume -> four disparity maps."""

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff.nn import Module
from .autodiff.tensor import as_tensor
from .cost import MFF, build_gwc_volume
from .features import BackboneConfig, FEMamba, PlainCNN, check_image_size
from .regress import Aggregation, disparity_regression, upsample_to_probability


@dataclass
class ModelConfig:
    backbone: str = "fe_mamba"  # or "plain_cnn"
    mff_enabled: bool = True
    d_max: int = 64
    groups: int = 8
    fused_channels: int = 48
    agg_channels: int = 8
    hourglass_count: int = 3
    head_hidden: int = 0  # 0: same as agg_channels
    features: BackboneConfig = field(default_factory=BackboneConfig)

    def __post_init__(self):
        if isinstance(self.features, dict):
            self.features = BackboneConfig(**self.features)
        if self.backbone not in ("fe_mamba", "plain_cnn"):
            raise ValueError(f"backbone must be 'fe_mamba' or 'plain_cnn', got {self.backbone!r}")
        if self.d_max % 4 or self.d_max < 4:
            raise ValueError(f"d_max must be a positive multiple of 4, got {self.d_max}")
        if self.fused_channels_total() % self.groups:
            raise ValueError(
                f"{self.fused_channels_total()} fused channels not divisible into {self.groups} groups")

    def fused_channels_total(self):
        if self.mff_enabled:
            return self.fused_channels + self.features.c4
        return self.features.c1

    def to_dict(self):
        return asdict(self)


class StereoMamba(Module):
    def __init__(self, cfg, seed=None):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.features.seed if seed is None else seed)
        fc = cfg.features
        if cfg.backbone == "fe_mamba":
            self.extractor = FEMamba(fc, rng)
        else:
            self.extractor = PlainCNN(fc, rng)
        self.mff = MFF(fc.c1, fc.c2, fc.c3, fc.c4, rng, cfg.fused_channels) if cfg.mff_enabled else None
        self.aggregation = Aggregation(cfg.groups, rng, cfg.agg_channels, cfg.hourglass_count,
                                       cfg.head_hidden or None)

    def fused_features(self, left, right):
        """Fused feature maps (left, right); both views share one stacked pass."""
        left, right = as_tensor(left), as_tensor(right)
        if left.ndim == 3:
            left, right = left.reshape((1,) + left.shape), right.reshape((1,) + right.shape)
        p = self.extractor.paired(left, right, need_cross=self.mff is not None)
        f = p.f1 if self.mff is None else self.mff(p.f1, p.f2, p.f3, p.f4)
        Bn = left.shape[0]
        return f[:Bn], f[Bn:]

    def cost_volume(self, left, right):
        fl, fr = self.fused_features(left, right)
        return build_gwc_volume(fl, fr, self.cfg.d_max // 4, self.cfg.groups)

    def forward(self, left, right, all_outputs=True):
        """Disparity maps ``[B, H, W]``: four when ``all_outputs``, else only the last."""
        H, W = left.shape[-2:]
        check_image_size(H, W)
        if left.shape != right.shape:
            raise ValueError(f"left image {left.shape} and right image {right.shape} differ")
        vol = self.cost_volume(left, right)
        raws = self.aggregation(vol, last_only=not all_outputs)
        cache = {}
        outs = []
        for raw in raws:
            if id(raw) not in cache:
                prob = upsample_to_probability(raw, self.cfg.d_max, H, W)
                cache[id(raw)] = disparity_regression(prob)
            outs.append(cache[id(raw)])
        return outs
