"""Synthetic layered stereograms with exact ground truth.

The left view is low-pass filtered RGB noise: a background texture with
``n_layers`` fronto-parallel rectangles pasted on top, each with its own
texture and a larger integer disparity than everything drawn before it. The
right view is the forward map ``right(x - d, y) = left(x, y)`` where the
larger disparity wins any collision; right pixels that nothing maps onto get
an independent filler texture. Integer disparities keep the photometric
relation exact.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter


@dataclass(frozen=True)
class Calib:
    focal_px: float = 320.0
    baseline_mm: float = 5.0


@dataclass
class StereoSample:
    left: np.ndarray  # [3, H, W]
    right: np.ndarray  # [3, H, W]
    gt_disparity: np.ndarray  # [H, W], pixels
    valid_mask: np.ndarray  # [H, W] bool
    calib: Calib = Calib()
    name: str = ""

    def __post_init__(self):
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        L, R, D, M = self.left, self.right, self.gt_disparity, self.valid_mask
        if L.ndim != 3 or L.shape[0] != 3 or R.shape != L.shape:
            raise ValueError(f"left {L.shape} / right {R.shape} must both be [3, H, W]")
        if D.shape != L.shape[1:] or M.shape != D.shape:
            raise ValueError(f"disparity {D.shape} / mask {M.shape} must be {L.shape[1:]}")
        with np.errstate(invalid="ignore"):
            if np.any(D[M] < 0):
                raise ValueError("negative ground-truth disparity inside the valid mask")

    @property
    def shape(self):
        return self.gt_disparity.shape


def smooth_texture(rng, shape, sigma=1.0):
    """Gaussian-filtered uniform noise per channel, rescaled to span [0, 1]."""
    noise = rng.random(shape)
    out = np.empty(shape)
    for c in range(shape[0]):
        t = gaussian_filter(noise[c], sigma, mode="reflect")
        lo, hi = t.min(), t.max()
        out[c] = (t - lo) / (hi - lo) if hi > lo else 0.5
    return out


def forward_map(left, disparity, filler=None):
    """Render the right view of ``left`` under integer ``disparity``.

    Returns ``(right, valid, written)``: ``valid[y, x]`` is True when left
    pixel (x, y) lands in frame and wins its target; ``written`` marks right
    pixels that received a left pixel. Unwritten right pixels come from
    ``filler`` (zeros when omitted).
    """
    d = np.asarray(disparity)
    if not np.array_equal(d, np.round(d)):
        raise ValueError("forward_map needs integer disparities")
    d = d.astype(np.int64)
    _, H, W = left.shape
    ys, xs = np.mgrid[0:H, 0:W]
    tx = xs - d
    inside = tx >= 0
    zbuf = np.full((H, W), -1, dtype=np.int64)
    np.maximum.at(zbuf, (ys[inside], tx[inside]), d[inside])
    valid = np.zeros((H, W), dtype=bool)
    valid[inside] = zbuf[ys[inside], tx[inside]] == d[inside]
    right = np.zeros_like(left) if filler is None else np.array(filler, dtype=np.float64)
    right[:, ys[valid], tx[valid]] = left[:, ys[valid], xs[valid]]
    return right, valid, zbuf >= 0


def synth_stereogram(seed, H=64, W=128, d_max_gt=16, n_layers=3, background_disparity=None,
                     calib=Calib()):
    """One random layered stereogram; ``seed`` may be an int or a ``SeedSequence``."""
    if H % 16 or W % 16 or H < 16 or W < 16:
        raise ValueError(f"image size {H}x{W} must be a positive multiple of 16")
    if not 0 < d_max_gt < W / 4:
        raise ValueError(f"d_max_gt = {d_max_gt} must be in (0, W/4 = {W / 4})")
    if n_layers < 0:
        raise ValueError(f"n_layers must be >= 0, got {n_layers}")
    rng = np.random.default_rng(seed)
    top = int(np.ceil(d_max_gt)) - 1  # largest integer disparity strictly below d_max_gt
    if background_disparity is None:
        background_disparity = int(rng.integers(0, max(1, top // 2) + 1))
    bg = int(background_disparity)
    if not 0 <= bg <= top:
        raise ValueError(f"background disparity {bg} outside [0, {top}]")

    left = smooth_texture(rng, (3, H, W))
    disp = np.full((H, W), bg, dtype=np.int64)
    if n_layers and bg < top:
        levels = np.sort(rng.integers(bg + 1, top + 1, size=n_layers))
        for lvl in levels:
            h = int(rng.integers(H // 4, H // 2 + 1))
            w = int(rng.integers(W // 8, W // 3 + 1))
            y0 = int(rng.integers(0, H - h + 1))
            x0 = int(rng.integers(0, W - w + 1))
            left[:, y0:y0 + h, x0:x0 + w] = smooth_texture(rng, (3, h, w))
            disp[y0:y0 + h, x0:x0 + w] = lvl
    filler = smooth_texture(rng, (3, H, W))
    right, valid, _ = forward_map(left, disp, filler)
    return StereoSample(left, right, disp.astype(np.float64), valid, calib)


def synth_dataset(n, seed, H=64, W=128, d_max_gt=16, n_layers=3):
    """``n`` independent samples drawn from child streams of ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(n)
    samples = [synth_stereogram(c, H, W, d_max_gt, n_layers) for c in children]
    for i, s in enumerate(samples):
        s.name = f"{i:05d}"
    return samples
