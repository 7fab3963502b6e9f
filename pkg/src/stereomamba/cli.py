"""Command-line entry point: synth, train, infer, eval, warp-eval, duality-check, bench.

Exit status: 0 on success, 2 on invalid input or configuration, 1 on any
other failure.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

log = logging.getLogger("stereomamba")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class UsageError(ValueError):
    pass


def _load_config(args, **overrides):
    from .train import TrainConfig

    d = {}
    if args.config:
        with open(args.config) as fh:
            d = json.load(fh)
        if not isinstance(d, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
    if args.seed is not None:
        d["seed"] = args.seed
    d.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(d)


def _need(value, flag):
    if not value:
        raise UsageError(f"{flag} is required")
    return value


def colorize(disparity, d_max):
    """Blue-to-red colour map of ``disparity / (d_max - 1)`` as a ``[3, H, W]`` image."""
    t = np.clip(np.asarray(disparity, dtype=np.float64) / max(d_max - 1, 1), 0.0, 1.0)
    stops = np.linspace(0.0, 1.0, 5)
    palette = np.array([[0.0, 0.0, 0.5], [0.0, 0.5, 1.0], [0.5, 1.0, 0.5], [1.0, 0.5, 0.0],
                        [0.5, 0.0, 0.0]])
    return np.stack([np.interp(t, stops, palette[:, c]) for c in range(3)])


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    from .data.io import save_dataset
    from .data.synth import synth_dataset

    cfg = _load_config(args)
    sp = cfg.synth
    count = args.count if args.count is not None else sp.train_samples
    out = _need(args.out, "--out")
    samples = synth_dataset(count, cfg.seed, sp.height, sp.width, sp.d_max_gt, sp.n_layers)
    save_dataset(out, samples, meta={"seed": cfg.seed, "synth": vars(sp)})
    print(f"wrote {count} samples to {out}")


def cmd_train(args):
    from .train import Trainer, write_eval

    cfg = _load_config(args, epochs=args.epochs)
    out = _need(args.out, "--out")
    os.makedirs(out, exist_ok=True)
    cfg.save(os.path.join(out, "config.json"))
    trainer = Trainer(cfg, out)
    if args.resume:
        trainer.load(args.resume)
        log.info("resumed from %s at step %d", args.resume, trainer.step)
    res = trainer.train(stop_after=args.stop_after)
    print(f"trained {res.steps} steps in {res.seconds:.1f}s; final epoch loss "
          f"{res.epoch_losses[-1]:.4f}")
    if trainer.val_set and trainer.step == trainer.total_steps:
        rows, agg, _ = trainer.evaluate()
        write_eval(os.path.join(out, "eval.csv"), rows, agg)
        print(f"held-out EPE {agg['epe']:.4f} px  Bad3 {agg['bad3']:.2f}%")


def cmd_infer(args):
    from .autodiff.tensor import Tensor, no_grad
    from .data.augment import normalize
    from .data.io import read_ppm, write_pfm, write_ppm
    from .train import load_model

    ckpt = _need(args.checkpoint, "--checkpoint")
    out = _need(args.out, "--out")
    left = read_ppm(_need(args.left, "--left"))
    right = read_ppm(_need(args.right, "--right"))
    if left.shape != right.shape:
        raise UsageError(f"left {left.shape} and right {right.shape} images differ in size")
    model, stats, cfg = load_model(ckpt)
    with no_grad():
        d = model(Tensor(normalize(left, stats)[None]), Tensor(normalize(right, stats)[None]),
                  all_outputs=False)[-1].data[0]
    base = out[:-4] if out.endswith(".pfm") else out
    write_pfm(base + ".pfm", d)
    write_ppm(base + ".ppm", colorize(d, cfg.d_max))
    print(f"disparity range [{d.min():.3f}, {d.max():.3f}] -> {base}.pfm, {base}.ppm")


def _predictions(args, samples):
    """Prediction maps for ``samples`` from --checkpoint or from a directory of PFMs."""
    from .data.io import read_pfm
    from .train import load_model, predict

    if args.checkpoint:
        model, stats, _ = load_model(args.checkpoint)
        return list(predict(model, samples, stats))
    pred_dir = _need(args.pred, "--pred or --checkpoint")
    preds = []
    for s in samples:
        for suffix in (".pred.pfm", ".disp.pfm"):
            path = os.path.join(pred_dir, s.name + suffix)
            if os.path.exists(path):
                preds.append(read_pfm(path).astype(np.float64))
                break
        else:
            raise UsageError(f"no prediction for {s.name} in {pred_dir}")
    return preds


def cmd_eval(args):
    from .data.io import load_dataset
    from .metrics import aggregate, disparity_metrics, usable_frame, write_metrics_csv
    from .regress import valid_mask

    samples = load_dataset(_need(args.data, "--data"))
    preds = _predictions(args, samples)
    rows = []
    for s, p in zip(samples, preds):
        if p.shape != s.gt_disparity.shape:
            raise UsageError(f"{s.name}: prediction {p.shape} vs ground truth {s.gt_disparity.shape}")
        mask = s.valid_mask & np.isfinite(s.gt_disparity)
        if args.d_max:
            mask = valid_mask(s.gt_disparity, args.d_max, mask)
        if not usable_frame(mask):
            log.info("skipping %s: < 10%% valid pixels", s.name)
            continue
        rows.append(disparity_metrics(p, s.gt_disparity, mask, s.calib).row(s.name))
    if not rows:
        raise UsageError("no frame has enough valid pixels to evaluate")
    agg = aggregate(rows)
    out = args.out or "eval.csv"
    write_metrics_csv(out, rows + [agg])
    print(f"{len(rows)} frames  EPE {agg['epe']:.4f}  Bad2 {agg['bad2']:.2f}%  "
          f"Bad3 {agg['bad3']:.2f}%  Bad5 {agg['bad5']:.2f}%  depth MAE {agg['depth_mae']:.3f} mm  "
          f"LPIPS n/a -> {out}")


def cmd_warp_eval(args):
    from .data.io import load_dataset
    from .metrics import aggregate, warp_quality, write_metrics_csv

    samples = load_dataset(_need(args.data, "--data"))
    preds = _predictions(args, samples)
    rows, ref = [], []
    for s, p in zip(samples, preds):
        s_pred, p_pred = warp_quality(s.left, s.right, p)
        s_gt, _ = warp_quality(s.left, s.right, np.where(s.valid_mask, s.gt_disparity, 0.0))
        nan = float("nan")
        rows.append({"frame": s.name, "epe": nan, "bad2": nan, "bad3": nan, "bad5": nan,
                     "depth_mae": nan, "ssim": s_pred, "psnr": p_pred,
                     "valid_px": int(s.valid_mask.sum())})
        ref.append(s_gt)
    agg = aggregate(rows)
    out = args.out or "warp_eval.csv"
    write_metrics_csv(out, rows + [agg])
    print(f"{len(rows)} frames  SSIM {agg['ssim']:.4f} (ground-truth warp {np.mean(ref):.4f})  "
          f"PSNR {agg['psnr']:.2f} dB  LPIPS n/a -> {out}")


def cmd_duality(args):
    from .ssm.checks import duality_check

    res = duality_check(n_seeds=args.seeds, seed=args.seed or 0)
    text = json.dumps(res, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    if not res["ok"]:
        raise RuntimeError("duality check failed")


def cmd_bench(args):
    from .ssm.checks import format_bench, scan_bench

    t_list = tuple(t for t in (1, 64, 128, 256, 512, 1024, 2048, 4096) if t <= args.t_max)
    rows = scan_bench(t_list=t_list, seed=args.seed or 0)
    text = format_bench(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="stereomamba", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON training/data configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output path")
        sp.set_defaults(func=fn)
        return sp

    sp = add("synth", cmd_synth, "generate a synthetic stereo dataset directory")
    sp.add_argument("--count", type=int)

    sp = add("train", cmd_train, "train a model; writes losses.csv, checkpoint.bin, eval.csv")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--stop-after", type=int, help="stop after this many total steps")

    sp = add("infer", cmd_infer, "predict disparity for one image pair")
    sp.add_argument("--checkpoint")
    sp.add_argument("--left")
    sp.add_argument("--right")

    for name, fn, help_ in (("eval", cmd_eval, "disparity metrics against a dataset's ground truth"),
                            ("warp-eval", cmd_warp_eval, "zero-shot warp protocol (SSIM / PSNR)")):
        sp = add(name, fn, help_)
        sp.add_argument("--data", help="dataset directory with ground truth")
        sp.add_argument("--pred", help="directory of <stem>.pred.pfm predictions")
        sp.add_argument("--checkpoint", help="predict with this model instead of --pred")
        if name == "eval":
            sp.add_argument("--d-max", type=int, default=0,
                            help="also drop ground truth outside (0, d_max)")

    sp = add("duality-check", cmd_duality, "scan == matrix == attention equivalence suite")
    sp.add_argument("--seeds", type=int, default=100)

    sp = add("bench", cmd_bench, "scan vs materialized-matrix timings")
    sp.add_argument("--t-max", type=int, default=4096)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime-failure status
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
