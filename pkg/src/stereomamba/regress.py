"""3D cost aggregation, probability volumes, soft-argmin and the training loss."""

import logging

import numpy as np

from .autodiff import conv as C
from .autodiff import functional as F
from .autodiff.nn import Conv3d, ConvTranspose3d, Module
from .autodiff.tensor import Function, Tensor, as_tensor

log = logging.getLogger(__name__)

LOSS_WEIGHTS = (0.5, 0.5, 0.7, 1.0)


class Hourglass(Module):
    """Two stride-2 3D convs down, two transposed 3D convs up, skip adds."""

    def __init__(self, c, rng):
        self.down1 = Conv3d(c, 2 * c, 3, rng, stride=2)
        self.conv1 = Conv3d(2 * c, 2 * c, 3, rng)
        self.down2 = Conv3d(2 * c, 2 * c, 3, rng, stride=2)
        self.conv2 = Conv3d(2 * c, 2 * c, 3, rng)
        self.up2 = ConvTranspose3d(2 * c, 2 * c, 3, rng, stride=2, padding=1, output_padding=1)
        self.up1 = ConvTranspose3d(2 * c, c, 3, rng, stride=2, padding=1, output_padding=1)

    def forward(self, x):
        a = F.relu(self.conv1(F.relu(self.down1(x))))
        b = F.relu(self.conv2(F.relu(self.down2(a))))
        a = F.relu(self.up2(b) + a)
        return F.relu(self.up1(a) + x)

    def flat_forward(self, x):
        """Same weights at stride 1, for volumes that cannot be halved twice."""
        a = F.relu(C.conv3d(x, self.down1.weight, self.down1.bias, 1, 1))
        a = F.relu(self.conv1(a))
        up = C.conv_transpose3d(a, self.up1.weight, self.up1.bias, 1, 1)
        return F.relu(up + x)


class OutputHead(Module):
    def __init__(self, c, rng, hidden=None):
        hidden = hidden or c
        self.conv1 = Conv3d(c, hidden, 3, rng)
        self.conv2 = Conv3d(hidden, 1, 3, rng)

    def forward(self, x):
        return self.conv2(F.relu(self.conv1(x)))


class Aggregation(Module):
    """Pre-aggregation block followed by ``hourglass_count`` hourglasses.

    Always yields four raw volumes ``[B, 1, D, H, W]``: one per stage, with the
    last one repeated when fewer than three hourglasses are configured.
    """

    def __init__(self, groups, rng, channels=8, hourglass_count=3, head_hidden=None):
        if not 0 <= hourglass_count <= 3:
            raise ValueError(f"hourglass_count must be in [0, 3], got {hourglass_count}")
        self.pre1 = Conv3d(groups, channels, 3, rng)
        self.pre2 = Conv3d(channels, channels, 3, rng)
        self.hourglasses = [Hourglass(channels, rng) for _ in range(hourglass_count)]
        self.heads = [OutputHead(channels, rng, head_hidden) for _ in range(hourglass_count + 1)]
        self._warned = False

    @staticmethod
    def can_halve_twice(shape):
        return all(n % 4 == 0 and n >= 4 for n in shape[-3:])

    def stages(self, volume):
        x = F.relu(self.pre2(F.relu(self.pre1(volume))))
        feats = [x]
        use_hourglass = self.can_halve_twice(volume.shape)
        if not use_hourglass and self.hourglasses and not self._warned:
            log.warning("volume %s too small for two stride-2 downsamples; "
                        "using flat 3D blocks", volume.shape[-3:])
            self._warned = True
        for blk in self.hourglasses:
            x = blk(x) if use_hourglass else blk.flat_forward(x)
            feats.append(x)
        return feats

    def forward(self, volume, last_only=False):
        feats = self.stages(volume)
        if last_only:
            return [self.heads[-1](feats[-1])]
        outs = [head(f) for head, f in zip(self.heads, feats)]
        while len(outs) < 4:
            outs.append(outs[-1])
        return outs


def upsample_to_probability(raw, d_max, height, width):
    """Trilinear resize ``[B, 1, Dq, h, w]`` -> ``[B, d_max, H, W]``, softmax over disparity.

    Disparity uses the ``t * Dq / d_max`` map, so full-resolution level ``4k``
    coincides with quarter level ``k``; the spatial axes use pixel-centre
    alignment.
    """
    raw = as_tensor(raw)
    if raw.ndim == 4:
        raw = raw.reshape((1,) + raw.shape)
    x = raw.reshape((raw.shape[0],) + raw.shape[2:])
    x = F.resize_axis(x, d_max, axis=1, mode="asymmetric")
    x = F.resize_axis(x, height, axis=2, mode="half_pixel")
    x = F.resize_axis(x, width, axis=3, mode="half_pixel")
    return F.softmax(x, axis=1)


def disparity_regression(prob):
    """Soft-argmin: ``sum_k k * p_k`` over axis 1 of ``[B, D, H, W]``."""
    prob = as_tensor(prob)
    D = prob.shape[1]
    k = Tensor(np.arange(D, dtype=np.float64).reshape(1, D, 1, 1))
    return (prob * k).sum(axis=1)


def smooth_l1(diff):
    """Elementwise 0.5 d^2 below |d| = 1, |d| - 0.5 above (numpy)."""
    a = np.abs(diff)
    return np.where(a < 1.0, 0.5 * diff * diff, a - 0.5)


class _MaskedSmoothL1(Function):
    def forward(self, pred, gt, mask):
        self.mask = mask
        self.count = int(mask.sum())
        self.diff = np.where(mask, pred - np.where(mask, gt, 0.0), 0.0)
        return np.asarray(smooth_l1(self.diff)[mask].sum() / self.count)

    def backward(self, g):
        return (g * np.clip(self.diff, -1.0, 1.0) * self.mask / self.count,)


def masked_smooth_l1(pred, gt, mask):
    """Mean smooth-L1 of ``pred - gt`` over ``mask`` (taped w.r.t. ``pred``)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty valid mask: loss mean is undefined")
    gt = gt.data if isinstance(gt, Tensor) else np.asarray(gt, dtype=np.float64)
    pred = as_tensor(pred)
    if gt.shape != pred.shape or mask.shape != pred.shape:
        raise ValueError(f"prediction {pred.shape}, gt {gt.shape} and mask {mask.shape} differ")
    return _MaskedSmoothL1.apply(pred, gt=gt, mask=mask)


def valid_mask(gt, d_max, mask=None):
    """Finite ground truth with 0 < gt < d_max, optionally intersected with ``mask``."""
    gt = np.asarray(gt, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        m = np.isfinite(gt) & (gt > 0) & (gt < d_max)
    if mask is not None:
        m &= np.asarray(mask, dtype=bool)
    return m


def multi_output_loss(outputs, gt, mask, weights=LOSS_WEIGHTS):
    """``sum_i w_i * mean_valid smoothL1(d_i - gt)`` over the four predictions."""
    if len(outputs) != len(weights):
        raise ValueError(f"{len(outputs)} outputs but {len(weights)} weights")
    total = None
    for w, d in zip(weights, outputs):
        term = masked_smooth_l1(d, gt, mask) * float(w)
        total = term if total is None else total + term
    return total
