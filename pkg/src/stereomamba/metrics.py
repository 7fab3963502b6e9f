"""Disparity metrics, SSIM / PSNR, and the warp-synthesis evaluation protocol."""

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

log = logging.getLogger(__name__)

PSNR_CAP_DB = 99.0
MIN_DEPTH_DISPARITY = 0.5
MIN_VALID_FRACTION = 0.10
CSV_COLUMNS = ("frame", "epe", "bad2", "bad3", "bad5", "depth_mae", "ssim", "psnr", "valid_px")


@dataclass
class MetricReport:
    epe_px: float
    bad2_pct: float
    bad3_pct: float
    bad5_pct: float
    depth_mae_mm: float
    valid_count: int
    ssim: float = float("nan")
    psnr_db: float = float("nan")

    def row(self, frame):
        return {"frame": frame, "epe": self.epe_px, "bad2": self.bad2_pct, "bad3": self.bad3_pct,
                "bad5": self.bad5_pct, "depth_mae": self.depth_mae_mm, "ssim": self.ssim,
                "psnr": self.psnr_db, "valid_px": self.valid_count}

    def summary(self):
        return (f"EPE {self.epe_px:.4f} px | Bad2 {self.bad2_pct:.2f}% | Bad3 {self.bad3_pct:.2f}% | "
                f"Bad5 {self.bad5_pct:.2f}% | depth MAE {self.depth_mae_mm:.3f} mm | "
                f"SSIM {self.ssim:.4f} | PSNR {self.psnr_db:.2f} dB | LPIPS n/a | "
                f"{self.valid_count} px")


def disparity_metrics(pred, gt, valid_mask, calib):
    """EPE / BadN / depth MAE over ``valid_mask``.

    Depth is ``focal_px * baseline_mm / d``; pixels where either disparity is
    at most 0.5 px are left out of the depth MAE (it is NaN if none remain).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(valid_mask, dtype=bool)
    if pred.shape != gt.shape or mask.shape != gt.shape:
        raise ValueError(f"pred {pred.shape}, gt {gt.shape} and mask {mask.shape} differ")
    if calib.focal_px <= 0 or calib.baseline_mm <= 0:
        raise ValueError(f"calibration must be positive, got {calib}")
    mask = mask & np.isfinite(gt)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("empty valid mask")
    err = np.abs(pred[mask] - gt[mask])
    p, g = pred[mask], gt[mask]
    keep = (p > MIN_DEPTH_DISPARITY) & (g > MIN_DEPTH_DISPARITY)
    fb = calib.focal_px * calib.baseline_mm
    depth_mae = float(np.mean(np.abs(fb / p[keep] - fb / g[keep]))) if keep.any() else float("nan")
    return MetricReport(float(err.mean()), 100.0 * float(np.mean(err > 2.0)),
                        100.0 * float(np.mean(err > 3.0)), 100.0 * float(np.mean(err > 5.0)),
                        depth_mae, n)


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x * x / (2.0 * sigma * sigma))
    return g / g.sum()


def _valid_filter(img, g):
    """Separable Gaussian mean at every fully-contained window position."""
    r = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim_map(a, b, size=11, sigma=1.5, data_range=1.0):
    """Per-window SSIM of two 2D images (valid window positions only)."""
    if a.shape[0] < size or a.shape[1] < size:
        raise ValueError(f"image {a.shape} smaller than the {size}x{size} SSIM window")
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    g = gaussian_window(size, sigma)
    mu_a, mu_b = _valid_filter(a, g), _valid_filter(b, g)
    saa = _valid_filter(a * a, g) - mu_a * mu_a
    sbb = _valid_filter(b * b, g) - mu_b * mu_b
    sab = _valid_filter(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return num / den


def _channels(x):
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 2 else x


def ssim(a, b, mask=None):
    """Mean SSIM over valid window positions, averaged over channels.

    With ``mask`` only windows centred on masked pixels count. Identical
    inputs return exactly 1.0.
    """
    a, b = _channels(a), _channels(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shapes {a.shape} and {b.shape} differ")
    if np.array_equal(a, b):
        return 1.0
    r = 5
    sel = None
    if mask is not None:
        sel = np.asarray(mask, dtype=bool)[r:a.shape[1] - r, r:a.shape[2] - r]
        if not sel.any():
            raise ValueError("ssim: no valid window centres inside the mask")
    vals = []
    for ca, cb in zip(a, b):
        m = ssim_map(ca, cb)
        vals.append(m[sel].mean() if sel is not None else m.mean())
    return float(np.mean(vals))


def psnr(a, b, mask=None):
    """``10 log10(1 / MSE)`` for range-1 images, capped at 99 dB."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes {a.shape} and {b.shape} differ")
    diff = a - b
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), diff.shape[-2:])
        diff = diff[..., m]
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def warp_synthesize(left, disparity, valid_hint=None):
    """Backward-sample ``right(x, y) = left(x + d(x, y), y)`` with linear interpolation.

    Returns ``(right_synth[3, H, W], warp_valid[H, W])``; samples whose
    source column falls outside ``[0, W - 1]`` are invalid (and zero).
    """
    left = _channels(left)
    d = np.asarray(disparity, dtype=np.float64)
    C, H, W = left.shape
    if d.shape != (H, W):
        raise ValueError(f"disparity {d.shape} does not match image {left.shape}")
    xs = np.arange(W)[None, :] + d
    valid = np.isfinite(xs) & (xs >= 0) & (xs <= W - 1)
    xc = np.where(valid, xs, 0.0)
    x0 = np.clip(np.floor(xc).astype(np.int64), 0, W - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    frac = xc - x0
    rows = np.arange(H)[:, None]
    out = left[:, rows, x0] * (1.0 - frac) + left[:, rows, x1] * frac
    out = np.where(valid, out, 0.0)
    if valid_hint is not None:
        valid = valid & np.asarray(valid_hint, dtype=bool)
    return out, valid


def warp_quality(left, right, disparity, valid_hint=None):
    """(SSIM, PSNR) of the warped left view against ``right`` over the warp-valid pixels."""
    synth, valid = warp_synthesize(left, disparity, valid_hint)
    right = _channels(right)
    if not valid.any():
        raise ValueError("warp produced no valid pixels")
    # invalid pixels are replaced by the reference so windows straddling them stay finite
    synth = np.where(valid, synth, right)
    return ssim(synth, right, mask=valid), psnr(synth, right, mask=valid)


def usable_frame(mask, min_fraction=MIN_VALID_FRACTION):
    return float(np.mean(mask)) >= min_fraction


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def aggregate(rows):
    """Mean of every metric column over ``rows`` (``frame`` = "mean", valid_px summed)."""
    if not rows:
        raise ValueError("no frames to aggregate")
    out = {"frame": "mean"}
    for k in CSV_COLUMNS[1:-1]:
        vals = np.array([r[k] for r in rows], dtype=np.float64)
        out[k] = float(np.nanmean(vals)) if np.isfinite(vals).any() else float("nan")
    out["valid_px"] = int(sum(r["valid_px"] for r in rows))
    return out

