"""Identical random crops of both views and per-channel colour normalization."""

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class ChannelStats:
    mean: tuple
    std: tuple

    def to_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(float(v) for v in d["mean"]), tuple(float(v) for v in d["std"]))


def dataset_stats(samples):
    """Per-channel mean / std over the left and right images of ``samples``."""
    if not samples:
        raise ValueError("cannot compute statistics of an empty dataset")
    pix = np.concatenate([np.concatenate([s.left.reshape(3, -1), s.right.reshape(3, -1)], axis=1)
                          for s in samples], axis=1)
    std = pix.std(axis=1)
    std[std == 0] = 1.0
    return ChannelStats(tuple(pix.mean(axis=1)), tuple(std))


def normalize(image, stats):
    mean = np.asarray(stats.mean).reshape(3, 1, 1)
    std = np.asarray(stats.std).reshape(3, 1, 1)
    return (image - mean) / std


def crop_window(shape, crop_hw, rng):
    H, W = shape
    ch, cw = crop_hw
    if ch % 16 or cw % 16 or ch < 16 or cw < 16:
        raise ValueError(f"crop {ch}x{cw} must be a positive multiple of 16")
    if ch > H or cw > W:
        raise ValueError(f"crop {ch}x{cw} larger than image {H}x{W}")
    return int(rng.integers(0, H - ch + 1)), int(rng.integers(0, W - cw + 1))


def augment(sample, crop_hw, stats, rng):
    """Same crop window on both views, gt and mask; images normalized by ``stats``.

    ``crop_hw=None`` keeps the full frame. Disparity values are untouched.
    """
    out = sample
    if crop_hw is not None:
        y0, x0 = crop_window(sample.shape, crop_hw, rng)
        win = (slice(y0, y0 + crop_hw[0]), slice(x0, x0 + crop_hw[1]))
        out = replace(sample, left=sample.left[(slice(None),) + win],
                      right=sample.right[(slice(None),) + win],
                      gt_disparity=sample.gt_disparity[win], valid_mask=sample.valid_mask[win])
    if stats is not None:
        out = replace(out, left=normalize(out.left, stats), right=normalize(out.right, stats))
    return out
