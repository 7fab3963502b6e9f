"""AdamW + one-cycle training on synthetic or on-disk stereo data, checkpoints, evaluation."""

import csv
import hashlib
import json
import logging
import math
import os
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ._accel import thread_cap
from .autodiff.tensor import Tensor, backward, no_grad
from .data.augment import ChannelStats, augment, dataset_stats, normalize
from .data.io import load_dataset
from .data.synth import synth_dataset
from .features import BackboneConfig
from .metrics import (aggregate, disparity_metrics, usable_frame, warp_quality,
                      write_metrics_csv)
from .model import ModelConfig, StereoMamba
from .regress import LOSS_WEIGHTS, multi_output_loss, valid_mask

log = logging.getLogger(__name__)

ADAM_EPS = 1e-8


@dataclass
class SynthParams:
    train_samples: int = 300
    val_samples: int = 40
    height: int = 64
    width: int = 128
    d_max_gt: int = 16
    n_layers: int = 3


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 4
    lr_max: float = 2e-4
    lr_schedule: str = "one_cycle"  # or "constant"
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    d_max: int = 64
    loss_weights: tuple = LOSS_WEIGHTS
    backbone: str = "fe_mamba"
    mff_enabled: bool = True
    hourglass_count: int = 3
    agg_channels: int = 8
    head_hidden: int = 0
    groups: int = 8
    features: BackboneConfig = field(default_factory=BackboneConfig)
    train_dir: str = ""
    val_dir: str = ""
    synth: SynthParams = field(default_factory=SynthParams)
    crop: tuple = None  # (h, w) or None for full frames

    def __post_init__(self):
        if isinstance(self.features, dict):
            self.features = BackboneConfig(**self.features)
        if isinstance(self.synth, dict):
            self.synth = SynthParams(**self.synth)
        self.betas = tuple(float(b) for b in self.betas)
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if self.crop is not None:
            self.crop = tuple(int(c) for c in self.crop)
        errs = []
        if self.d_max % 4 or self.d_max < 4:
            errs.append(f"d_max must be a positive multiple of 4 (got {self.d_max})")
        if len(self.loss_weights) != 4 or min(self.loss_weights) < 0:
            errs.append(f"loss_weights must be four nonnegative numbers (got {self.loss_weights})")
        if self.batch_size < 1:
            errs.append(f"batch_size must be >= 1 (got {self.batch_size})")
        if self.epochs < 1:
            errs.append(f"epochs must be >= 1 (got {self.epochs})")
        if self.lr_schedule not in ("one_cycle", "constant"):
            errs.append(f"lr_schedule must be 'one_cycle' or 'constant' (got {self.lr_schedule!r})")
        if self.lr_max <= 0 or self.weight_decay < 0 or not all(0 <= b < 1 for b in self.betas):
            errs.append("lr_max must be > 0, weight_decay >= 0 and betas in [0, 1)")
        if self.crop is not None and (len(self.crop) != 2 or any(c % 16 or c < 16 for c in self.crop)):
            errs.append(f"crop must be two positive multiples of 16 (got {self.crop})")
        if errs:
            raise ValueError("; ".join(errs))
        self.model_config()

    def model_config(self):
        return ModelConfig(backbone=self.backbone, mff_enabled=self.mff_enabled, d_max=self.d_max,
                           groups=self.groups, agg_channels=self.agg_channels,
                           hourglass_count=self.hourglass_count, head_hidden=self.head_hidden,
                           features=self.features)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def one_cycle_lr(step, total_steps, lr_max, warmup=0.3, div=25.0, final_div=1e4):
    """Cosine warm-up from ``lr_max/div`` to ``lr_max`` over ``warmup * total``, then cosine
    anneal to ``lr_max/final_div``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    peak = warmup * total_steps
    if step <= peak:
        lo, hi, f = lr_max / div, lr_max, (step / peak if peak > 0 else 1.0)
    else:
        lo, hi, f = lr_max, lr_max / final_div, (step - peak) / (total_steps - peak)
    # written so that f == 1 lands exactly on ``hi``
    return hi + (lo - hi) * 0.5 * (1.0 + math.cos(math.pi * f))


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros(cls, named_params):
        return cls({n: np.zeros_like(p.data) for n, p in named_params},
                   {n: np.zeros_like(p.data) for n, p in named_params}, 0)


def adamw_step(params, grads, state, lr, betas=(0.9, 0.999), weight_decay=0.0, eps=ADAM_EPS):
    """One in-place AdamW update of ``params`` (name -> array) with decoupled decay."""
    state.t += 1
    t = state.t
    b1, b2 = betas
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# -- checkpoint container: b"SMCKPT01" | u64 manifest length | manifest JSON | pad to 8 | float64 LE

_MAGIC = b"SMCKPT01"


def save_checkpoint(path, arrays, meta):
    """Write ``arrays`` (name -> float64 array) with ``meta`` into one file, atomically."""
    entries, offset = [], 0
    for name, a in arrays.items():
        a = np.asarray(a, dtype=np.float64)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size * 8
    manifest = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode()
    pad = (-(len(_MAGIC) + 8 + len(manifest))) % 8
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        fh.write(b" " * pad)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return ``(arrays, meta)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", buf[8:16])
    doc = json.loads(buf[16:16 + n].decode())
    base = 16 + n + (-(16 + n)) % 8
    arrays = {}
    for e in doc["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        if start + 8 * count > len(buf):
            raise ValueError(f"{path}: truncated tensor {e['name']}")
        arrays[e["name"]] = np.frombuffer(buf, dtype="<f8", count=count,
                                          offset=start).reshape(e["shape"]).astype(np.float64)
    return arrays, doc["meta"]


@dataclass
class Batch:
    left: np.ndarray
    right: np.ndarray
    gt: np.ndarray
    mask: np.ndarray


def make_batch(samples, crop, stats, rng, d_max):
    aug = [augment(s, crop, stats, rng) for s in samples]
    gt = np.stack([a.gt_disparity for a in aug])
    mask = valid_mask(gt, d_max, np.stack([a.valid_mask for a in aug]))
    return Batch(np.stack([a.left for a in aug]), np.stack([a.right for a in aug]), gt, mask)


def build_datasets(cfg):
    """(train, held-out) sample lists from directories or the seeded generator."""
    if cfg.train_dir:
        train = load_dataset(cfg.train_dir)
        val = load_dataset(cfg.val_dir) if cfg.val_dir else []
        return train, val
    sp = cfg.synth
    train_seq, val_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    train = synth_dataset(sp.train_samples, train_seq, sp.height, sp.width, sp.d_max_gt, sp.n_layers)
    val = synth_dataset(sp.val_samples, val_seq, sp.height, sp.width, sp.d_max_gt, sp.n_layers)
    return train, val


def predict(model, samples, stats, batch_size=8):
    """Final-output disparity maps ``[N, H, W]`` for full frames (no grad)."""
    preds = []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            left = np.stack([normalize(s.left, stats) for s in chunk])
            right = np.stack([normalize(s.right, stats) for s in chunk])
            out = model(Tensor(left), Tensor(right), all_outputs=False)[-1]
            preds.append(out.data)
    return np.concatenate(preds, axis=0)


def evaluate(model, samples, stats, d_max, with_warp=False, min_valid=0.10):
    """Per-frame metric rows and their mean; frames with < ``min_valid`` valid pixels are skipped."""
    preds = predict(model, samples, stats)

    def one(i):
        s = samples[i]
        mask = valid_mask(s.gt_disparity, d_max, s.valid_mask)
        if not usable_frame(mask, min_valid):
            return None
        rep = disparity_metrics(preds[i], s.gt_disparity, mask, s.calib)
        if with_warp:
            rep.ssim, rep.psnr_db = warp_quality(s.left, s.right, preds[i])
        return rep.row(s.name or f"{i:05d}")

    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        rows = [r for r in pool.map(one, range(len(samples))) if r is not None]
    skipped = len(samples) - len(rows)
    if skipped:
        log.info("skipped %d frame(s) with < %.0f%% valid pixels", skipped, 100 * min_valid)
    return rows, aggregate(rows), preds


@dataclass
class TrainResult:
    losses: list
    epoch_losses: list
    seconds: float
    steps: int


class Trainer:
    """Owns model, optimizer state and data; one optimizer step at a time.

    Sample order and crop windows derive from ``(seed, epoch, batch)`` only,
    so a run resumed from a checkpoint repeats the uninterrupted run exactly.
    """

    def __init__(self, cfg, out_dir=None, data=None):
        self.cfg = cfg
        self.out_dir = out_dir
        self.model = StereoMamba(cfg.model_config(), seed=cfg.seed)
        self.params = dict(self.model.named_parameters())
        self.opt = AdamState.zeros(self.params.items())
        self.train_set, self.val_set = data if data is not None else build_datasets(cfg)
        if not self.train_set:
            raise ValueError("training set is empty")
        self.stats = dataset_stats(self.train_set)
        self.steps_per_epoch = math.ceil(len(self.train_set) / cfg.batch_size)
        self.total_steps = self.steps_per_epoch * cfg.epochs
        self.step = 0
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)

    # -- schedule / data order

    def lr(self, step):
        if self.cfg.lr_schedule == "constant":
            return self.cfg.lr_max
        return one_cycle_lr(step, self.total_steps, self.cfg.lr_max)

    def epoch_order(self, epoch):
        return np.random.default_rng([self.cfg.seed, epoch, 0]).permutation(len(self.train_set))

    def batch_for(self, step):
        epoch, k = divmod(step, self.steps_per_epoch)
        idx = self.epoch_order(epoch)[k * self.cfg.batch_size:(k + 1) * self.cfg.batch_size]
        rng = np.random.default_rng([self.cfg.seed, epoch, k + 1])
        return make_batch([self.train_set[i] for i in idx], self.cfg.crop, self.stats, rng,
                          self.cfg.d_max)

    # -- one update

    def train_step(self, batch):
        self.model.zero_grad()
        outs = self.model(Tensor(batch.left), Tensor(batch.right), all_outputs=True)
        loss = multi_output_loss(outs, batch.gt, batch.mask, self.cfg.loss_weights)
        backward(loss)
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        adamw_step({n: p.data for n, p in self.params.items()}, grads, self.opt,
                   self.lr(self.step), self.cfg.betas, self.cfg.weight_decay)
        self.step += 1
        return float(loss.data)

    # -- persistence

    def state_arrays(self):
        arrays = {}
        for n, p in self.params.items():
            arrays["param/" + n] = p.data
        for n in self.params:
            arrays["adam_m/" + n] = self.opt.m[n]
            arrays["adam_v/" + n] = self.opt.v[n]
        return arrays

    def save(self, path):
        meta = {"step": self.step, "adam_t": self.opt.t, "config": self.cfg.to_dict(),
                "config_fingerprint": self.cfg.fingerprint(), "stats": self.stats.to_dict()}
        save_checkpoint(path, self.state_arrays(), meta)

    def load(self, path):
        arrays, meta = load_checkpoint(path)
        if meta["config_fingerprint"] != self.cfg.fingerprint():
            raise ValueError(f"{path}: checkpoint config fingerprint {meta['config_fingerprint']} "
                             f"does not match {self.cfg.fingerprint()}")
        self.model.load_state_dict({n[6:]: a for n, a in arrays.items() if n.startswith("param/")})
        for n in self.params:
            self.opt.m[n] = arrays["adam_m/" + n].copy()
            self.opt.v[n] = arrays["adam_v/" + n].copy()
        self.opt.t = int(meta["adam_t"])
        self.step = int(meta["step"])

    # -- loop

    def _loss_rows(self, path):
        rows = []
        if os.path.exists(path):
            with open(path, newline="") as fh:
                rows = [r for r in csv.DictReader(fh) if int(r["step"]) < self.step]
        return rows

    def train(self, stop_after=None, checkpoint_every_epoch=True):
        """Run until the configured number of epochs (or ``stop_after`` total steps)."""
        cfg = self.cfg
        end = self.total_steps if stop_after is None else min(stop_after, self.total_steps)
        csv_path = os.path.join(self.out_dir, "losses.csv") if self.out_dir else None
        prior = self._loss_rows(csv_path) if csv_path else []
        fh = writer = None
        if csv_path:
            fh = open(csv_path, "w", newline="")
            writer = csv.writer(fh)
            writer.writerow(["step", "epoch", "lr", "loss"])
            for r in prior:
                writer.writerow([r["step"], r["epoch"], r["lr"], r["loss"]])
        losses = [float(r["loss"]) for r in prior]
        t0 = time.perf_counter()
        try:
            while self.step < end:
                step = self.step
                lr = self.lr(step)
                loss = self.train_step(self.batch_for(step))
                if not math.isfinite(loss):
                    raise FloatingPointError(f"non-finite loss at step {step}")
                losses.append(loss)
                epoch = step // self.steps_per_epoch
                if writer:
                    writer.writerow([step, epoch, repr(lr), repr(loss)])
                if self.step % self.steps_per_epoch == 0:
                    e_loss = float(np.mean(losses[-self.steps_per_epoch:]))
                    log.info("epoch %d/%d  loss %.4f  lr %.2e  %.1fs", epoch + 1, cfg.epochs,
                             e_loss, lr, time.perf_counter() - t0)
                    if fh:
                        fh.flush()
                    if self.out_dir and checkpoint_every_epoch:
                        self.save(os.path.join(self.out_dir, "checkpoint.bin"))
        finally:
            if fh:
                fh.close()
        if self.out_dir:
            self.save(os.path.join(self.out_dir, "checkpoint.bin"))
        spe = self.steps_per_epoch
        epoch_losses = [float(np.mean(losses[i:i + spe])) for i in range(0, len(losses), spe)]
        return TrainResult(losses, epoch_losses, time.perf_counter() - t0, self.step)

    def evaluate(self, samples=None, with_warp=False):
        samples = self.val_set if samples is None else samples
        return evaluate(self.model, samples, self.stats, self.cfg.d_max, with_warp)


def load_model(path):
    """(model, stats, config) from a checkpoint file."""
    arrays, meta = load_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["config"])
    model = StereoMamba(cfg.model_config(), seed=cfg.seed)
    model.load_state_dict({n[6:]: a for n, a in arrays.items() if n.startswith("param/")})
    return model, ChannelStats.from_dict(meta["stats"]), cfg


ABLATION_VARIANTS = {
    "plain_cnn": {"backbone": "plain_cnn", "mff_enabled": True},
    "fe_mamba_no_mff": {"backbone": "fe_mamba", "mff_enabled": False},
    "fe_mamba_mff": {"backbone": "fe_mamba", "mff_enabled": True},
}


def ablation_run(cfg, out_dir=None, variants=None):
    """Train each variant on the same data and seed; returns one report row per variant."""
    variants = ABLATION_VARIANTS if variants is None else variants
    data = build_datasets(cfg)
    rows = []
    for name, overrides in variants.items():
        d = cfg.to_dict()
        d.update(overrides)
        vcfg = TrainConfig.from_dict(d)
        vdir = os.path.join(out_dir, name) if out_dir else None
        trainer = Trainer(vcfg, vdir, data=data)
        res = trainer.train()
        _, agg, _ = trainer.evaluate()
        rows.append({"variant": name, "params": trainer.model.num_parameters(),
                     "final_loss": res.epoch_losses[-1], "epe": agg["epe"], "bad2": agg["bad2"],
                     "bad3": agg["bad3"], "bad5": agg["bad5"], "seconds": res.seconds})
        log.info("ablation %s: EPE %.3f  Bad3 %.2f%%", name, agg["epe"], agg["bad3"])
    if out_dir:
        with open(os.path.join(out_dir, "ablation.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return rows


def write_eval(path, rows, agg):
    write_metrics_csv(path, list(rows) + [agg])
