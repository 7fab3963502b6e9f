"""One test per acceptance criterion; each prints a single ACCEPTANCE n: PASS/FAIL line.

The lines are also collected into an "acceptance criteria" section of the
terminal summary. Criteria 5 and 6 share one desk-scale training run (about
8 minutes on one core); deselect it with ``-m "not slow"``.
"""

import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from _configs import DESK, tiny_config
from _gradutil import param_direction_check
from test_autodiff import OPS
from test_metrics import metrics_oracle
from test_train import tiny_model

from stereomamba.autodiff import Tensor, backward, gradcheck
from stereomamba.cost import build_gwc_volume, gwc_volume_oracle
from stereomamba.data import io
from stereomamba.data.synth import Calib
from stereomamba.metrics import disparity_metrics, warp_quality
from stereomamba.regress import (LOSS_WEIGHTS, disparity_regression, masked_smooth_l1,
                                 multi_output_loss, smooth_l1, upsample_to_probability)
from stereomamba.ssm.checks import duality_check
from stereomamba.ssm.core import selective_scan
from stereomamba.train import TrainConfig, Trainer, build_datasets

ROOT = Path(__file__).resolve().parents[1]
ARTIFACTS = ROOT / "artifacts"

# pinned from the first frozen-seed desk run (EPE 0.4301, Bad3 1.974 %, loss ratio 0.0116), +20 %
PINNED_EPE = 0.516
PINNED_BAD3 = 2.37
PINNED_LOSS_RATIO = 0.0139


def test_criterion_1_duality(verdict):
    t0 = time.perf_counter()
    res = duality_check(n_seeds=100)
    dt = time.perf_counter() - t0
    ok = (res["max_abs_scan_vs_matrix"] < 1e-10 and res["max_abs_scan_vs_attention"] < 1e-12
          and dt < 5.0)
    verdict(1, ok, f"100 seeds: scan-matrix {res['max_abs_scan_vs_matrix']:.1e}, "
                   f"scan-attention {res['max_abs_scan_vs_attention']:.1e}, {dt:.2f}s")


EXTRA_OPS = {
    "selective_scan": (
        lambda A, B, C, x: selective_scan(A, B, C, x, order=np.stack([np.arange(5), np.arange(5)[::-1]])),
        lambda r: [r.uniform(0.2, 1, (4, 5, 2)), r.standard_normal((4, 5, 3)),
                   r.standard_normal((4, 5, 3)), r.standard_normal((4, 5, 2))]),
    "gwc_volume": (lambda a, b: build_gwc_volume(a, b, 3, 2),
                   lambda r: [r.standard_normal((1, 4, 3, 5)), r.standard_normal((1, 4, 3, 5))]),
    "upsample_probability": (lambda v: upsample_to_probability(v, 8, 4, 6),
                             lambda r: [r.standard_normal((1, 1, 2, 2, 3))]),
    "soft_argmin": (disparity_regression, lambda r: [r.uniform(0.1, 1, (1, 6, 2, 3))]),
    "smooth_l1_loss": (lambda p: masked_smooth_l1(p, np.zeros((2, 5)), np.ones((2, 5), bool)),
                       lambda r: [r.uniform(0.1, 3, (2, 5)) * r.choice([-1, 1], (2, 5))]),
}


def test_criterion_2_gradients(verdict):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    failed = []
    ops = {**OPS, **EXTRA_OPS}
    for name, (fn, make) in sorted(ops.items()):
        ok, worst, _ = gradcheck(fn, make(rng), rtol=1e-5)
        if not ok:
            failed.append(f"{name} ({worst:.1e})")
    m = tiny_model(rng)
    L, R = rng.standard_normal((2, 1, 3, 32, 64))
    proj = rng.standard_normal((1, 32, 64))
    ref = [o.data.copy() for o in m(Tensor(L), Tensor(R))]

    def loss():
        return sum(((o - Tensor(r)) * Tensor(proj)).sum() for o, r in zip(m(Tensor(L), Tensor(R)), ref))

    failed += [f"model.{n}" for n, _, _ in param_direction_check(m, loss)]
    ok_in, worst_in, _ = gradcheck(lambda l, r: m(l, r)[-1], [L, R], step=3e-5, max_coords=24)
    if not ok_in:
        failed.append(f"model inputs ({worst_in:.1e})")
    dt = time.perf_counter() - t0
    n_params = len(list(m.named_parameters()))
    verdict(2, not failed and dt < 60.0,
            f"{len(ops)} taped ops + tiny model ({n_params} parameter tensors, 8x16 volume, D_max 16) "
            f"at rtol 1e-5, {dt:.1f}s" + (f"; failed: {', '.join(failed)}" if failed else ""))


def test_criterion_3_cost_volume(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        groups = int(rng.integers(1, 5))
        C = groups * int(rng.integers(1, 4))
        shape = (int(rng.integers(1, 3)), C, int(rng.integers(1, 6)), int(rng.integers(1, 10)))
        D = int(rng.integers(1, 7))
        fl, fr = rng.standard_normal(shape), rng.standard_normal(shape)
        got = build_gwc_volume(fl, fr, D, groups).data
        worst = max(worst, float(np.abs(got - gwc_volume_oracle(fl, fr, D, groups)).max()))
    inv_ok = True
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        fl, fr = rng.standard_normal((8, 3, 9)), rng.standard_normal((8, 3, 9))
        v = build_gwc_volume(fl, fr, 4, 2).data
        zero = build_gwc_volume(fl, fl, 1, 2).data[:, 0]
        inv_ok &= np.allclose(zero, (fl * fl).reshape(2, 4, 3, 9).mean(axis=1), rtol=0, atol=1e-12)
        shifted = np.zeros_like(fr)
        shifted[..., :-1] = fr[..., 1:]
        vs = build_gwc_volume(fl, shifted, 5, 2).data
        inv_ok &= all(np.array_equal(vs[:, d + 1, :, d + 1:], v[:, d, :, d + 1:]) for d in range(4))
        s = rng.uniform(-3, 3)
        inv_ok &= np.allclose(build_gwc_volume(s * fl, s * fr, 4, 2).data, s * s * v, rtol=0,
                              atol=1e-12 * max(1.0, s * s))
    dt = time.perf_counter() - t0
    verdict(3, worst < 1e-12 and inv_ok and dt < 10.0,
            f"50 oracle instances max diff {worst:.1e}; zero-shift/shift/scaling invariants "
            f"{'hold' if inv_ok else 'VIOLATED'}; {dt:.2f}s")


def test_criterion_4_regression_algebra(verdict):
    notes = []
    p = np.zeros((1, 16, 2, 3))
    p[:, 5] = 1.0
    one_hot = bool(np.all(disparity_regression(p).data == 5.0))
    uniform = all(np.all(disparity_regression(np.full((1, D, 2, 2), 1.0 / D)).data == (D - 1) / 2)
                  for D in (4, 16, 64, 192))
    eps = 1e-9
    lo, mid, hi = (float(smooth_l1(np.array(v))) for v in (1 - eps, 1.0, 1 + eps))
    jump = abs((hi - lo) - 2 * eps)
    slope_gap = abs((hi - mid) / eps - (mid - lo) / eps)
    c1 = mid == 0.5 and jump < 1e-9 and slope_gap < 1e-6
    rng = np.random.default_rng(4)
    gt = rng.uniform(0, 10, (2, 6, 7))
    mask = rng.random(gt.shape) > 0.3
    outs = [Tensor(gt + rng.standard_normal(gt.shape) * 2, requires_grad=True) for _ in range(4)]
    backward(multi_output_loss(outs, gt, mask))
    gdiff = max(float(np.abs(d.grad - np.where(mask, w * np.clip(d.data - gt, -1, 1) / mask.sum(), 0)).max())
                for w, d in zip(LOSS_WEIGHTS, outs))
    for flag, text in ((one_hot, "one-hot"), (uniform, "uniform"), (c1, "smooth-L1 C1"),
                       (gdiff < 1e-10, "loss gradient")):
        if not flag:
            notes.append(text)
    verdict(4, not notes, f"one-hot 5.0 exact, uniform (D-1)/2 exact, breakpoint jump {jump:.1e}, "
                          f"loss-gradient diff {gdiff:.1e}" + (f"; failed: {notes}" if notes else ""))


@pytest.fixture(scope="module")
def desk_run():
    """The frozen desk-scale run, artifacts archived under artifacts/desk."""
    out = ARTIFACTS / "desk"
    t0 = time.perf_counter()
    cfg = TrainConfig.load(str(ROOT / "configs" / "desk.json"))
    trainer = Trainer(cfg, str(out))
    res = trainer.train()
    rows, agg, preds = trainer.evaluate(with_warp=True)
    wall = time.perf_counter() - t0
    gt_ssim = [warp_quality(s.left, s.right, np.where(s.valid_mask, s.gt_disparity, 0.0))[0]
               for s in trainer.val_set]
    summary = {"wall_s": wall, "train_s": res.seconds, "epoch_losses": res.epoch_losses,
               "metrics": agg, "gt_warp_ssim": float(np.mean(gt_ssim))}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return cfg, res, agg, wall, summary


@pytest.mark.slow
def test_criterion_5_learning_signal(desk_run, verdict):
    cfg, res, agg, wall, _ = desk_run
    ratio = res.epoch_losses[-1] / res.epoch_losses[0]
    ok = (agg["epe"] < 2.0 and agg["bad3"] < 15.0 and ratio < 0.25 and wall < 600
          and agg["epe"] <= PINNED_EPE and agg["bad3"] <= PINNED_BAD3 and ratio <= PINNED_LOSS_RATIO)
    assert cfg.to_dict() == TrainConfig.from_dict(DESK).to_dict()
    verdict(5, ok, f"held-out EPE {agg['epe']:.4f} px (pin {PINNED_EPE}), Bad3 {agg['bad3']:.2f}% "
                   f"(pin {PINNED_BAD3}), loss ratio {ratio:.4f} (pin {PINNED_LOSS_RATIO}), "
                   f"wall {wall:.0f}s")


@pytest.mark.slow
def test_criterion_6_warp_protocol(desk_run, verdict):
    _, _, agg, _, summary = desk_run
    rng = np.random.default_rng(6)
    left = rng.random((3, 32, 48))
    s_id, p_id = warp_quality(left, left, np.zeros((32, 48)))
    gap = abs(agg["ssim"] - summary["gt_warp_ssim"])
    verdict(6, gap < 0.05 and s_id == 1.0 and p_id == 99.0,
            f"predicted-warp SSIM {agg['ssim']:.4f} vs ground-truth-warp {summary['gt_warp_ssim']:.4f} "
            f"(gap {gap:.4f}); identity SSIM {s_id}, PSNR {p_id} dB")


def _cli(*args):
    env = dict(os.environ)
    return subprocess.run([sys.executable, "-m", "stereomamba", *args], capture_output=True,
                          text=True, env=env, timeout=600)


def test_criterion_7_determinism(tmp_path, verdict):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(tiny_config(epochs=3)))
    codes = [_cli("train", "--config", str(cfg), "--out", str(tmp_path / d)).returncode
             for d in ("a", "b")]
    same_csv = (tmp_path / "a" / "losses.csv").read_bytes() == (tmp_path / "b" / "losses.csv").read_bytes()
    same_ckpt = (tmp_path / "a" / "checkpoint.bin").read_bytes() == (tmp_path / "b" / "checkpoint.bin").read_bytes()
    codes.append(_cli("train", "--config", str(cfg), "--out", str(tmp_path / "c"),
                      "--stop-after", "5").returncode)
    codes.append(_cli("train", "--config", str(cfg), "--out", str(tmp_path / "c"),
                      "--resume", str(tmp_path / "c" / "checkpoint.bin")).returncode)
    resumed = ((tmp_path / "a" / "losses.csv").read_bytes() == (tmp_path / "c" / "losses.csv").read_bytes()
               and (tmp_path / "a" / "checkpoint.bin").read_bytes()
               == (tmp_path / "c" / "checkpoint.bin").read_bytes())
    verdict(7, codes == [0, 0, 0, 0] and same_csv and same_ckpt and resumed,
            f"two train runs: loss CSV {'identical' if same_csv else 'DIFFER'}, checkpoints "
            f"{'identical' if same_ckpt else 'DIFFER'}; stop at step 5 + resume "
            f"{'matches' if resumed else 'DIFFERS'} bitwise")


def test_criterion_8_formats_and_metrics(tmp_path, verdict):
    io.write_pfm(tmp_path / "a.pfm", np.array([[1.0, 2.0], [3.0, 4.0]]))
    pfm = (tmp_path / "a.pfm").read_bytes() == (b"Pf\n2 2\n-1.0\n"
                                                + np.array([3, 4, 1, 2], dtype="<f4").tobytes())
    io.write_ppm(tmp_path / "a.ppm", np.zeros((3, 3, 4)))
    ppm = (tmp_path / "a.ppm").read_bytes() == b"P6\n4 3\n255\n" + bytes(36)
    worst = 0.0
    order = True
    for seed in range(100):
        rng = np.random.default_rng(seed)
        gt = rng.uniform(0, 64, (8, 9))
        pred = gt + rng.standard_normal(gt.shape) * rng.uniform(0.1, 10)
        mask = rng.random(gt.shape) > 0.1
        r = disparity_metrics(pred, gt, mask, Calib())
        order &= r.bad5_pct <= r.bad3_pct <= r.bad2_pct
        want = metrics_oracle(pred, gt, mask, 320.0, 5.0)
        got = (r.epe_px, r.bad2_pct, r.bad3_pct, r.bad5_pct, r.depth_mae_mm)
        worst = max(worst, float(np.max(np.abs(np.subtract(got, want)))))
    verdict(8, pfm and ppm and worst < 1e-12 and order,
            f"PFM golden {'ok' if pfm else 'MISMATCH'}, PPM golden {'ok' if ppm else 'MISMATCH'}, "
            f"metric oracle max diff {worst:.1e}, Bad5<=Bad3<=Bad2 on 100 maps "
            f"{'holds' if order else 'VIOLATED'}")


def test_criterion_9_complexity_report(verdict):
    ARTIFACTS.mkdir(exist_ok=True)
    out = ARTIFACTS / "bench_report.txt"
    r = _cli("bench", "--t-max", "4096", "--out", str(out))
    text = out.read_text() if out.exists() else ""
    rows = [line.split() for line in text.splitlines()[1:]]
    lengths = [int(row[0]) for row in rows]
    ok = r.returncode == 0 and lengths and lengths[-1] == 4096
    last = rows[-1] if rows else ["?"] * 6
    verdict(9, ok, f"bench T=1..4096 equality held (exit {r.returncode}); T=4096 scan {last[1]}s, "
                   f"matrix {last[2]}s; report in {out.relative_to(ROOT)}")
