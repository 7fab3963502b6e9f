import math

import numpy as np
import pytest
from _configs import SMALL_FEATURES, tiny_config
from _gradutil import param_direction_check

from stereomamba.autodiff import Tensor, gradcheck
from stereomamba.features import BackboneConfig
from stereomamba.model import ModelConfig, StereoMamba
from stereomamba.train import (ABLATION_VARIANTS, AdamState, TrainConfig, Trainer, ablation_run,
                               adamw_step, build_datasets, load_checkpoint, load_model,
                               one_cycle_lr, predict, save_checkpoint)


@pytest.fixture(scope="module")
def tiny_data():
    return build_datasets(TrainConfig.from_dict(tiny_config()))


# ---------------------------------------------------------------- optimizer

def test_adamw_zero_grad_is_noop(rng):
    p = {"w": rng.standard_normal((3, 4))}
    before = p["w"].copy()
    st = AdamState({"w": np.zeros((3, 4))}, {"w": np.zeros((3, 4))})
    for _ in range(3):
        adamw_step(p, {"w": np.zeros((3, 4))}, st, 1e-2)
    np.testing.assert_array_equal(p["w"], before)


def test_adamw_first_step_closed_form():
    p = {"w": np.array([0.3])}
    st = AdamState({"w": np.zeros(1)}, {"w": np.zeros(1)})
    adamw_step(p, {"w": np.array([1.0])}, st, 1e-3)
    assert p["w"][0] == pytest.approx(0.3 - 1e-3 / (1 + 1e-8), abs=1e-17)
    assert st.t == 1


def test_adamw_decay_is_decoupled():
    p = {"w": np.array([2.0])}
    st = AdamState({"w": np.zeros(1)}, {"w": np.zeros(1)})
    adamw_step(p, {"w": np.zeros(1)}, st, 0.1, weight_decay=0.5)
    assert p["w"][0] == pytest.approx(2.0 * (1 - 0.05), abs=1e-15)
    assert st.m["w"][0] == 0.0 and st.v["w"][0] == 0.0


def test_adamw_quadratic_bowl(rng):
    Q = rng.standard_normal((6, 6))
    Q = Q @ Q.T + np.eye(6)
    w = {"w": rng.standard_normal(6) * 3}
    st = AdamState({"w": np.zeros(6)}, {"w": np.zeros(6)})
    losses = []
    for _ in range(100):
        losses.append(0.5 * w["w"] @ Q @ w["w"])
        adamw_step(w, {"w": Q @ w["w"]}, st, 0.05)
    assert all(b < a for a, b in zip(losses[5:], losses[6:]))


def test_adamw_shape_mismatch():
    st = AdamState({"w": np.zeros(2)}, {"w": np.zeros(2)})
    with pytest.raises(ValueError, match="shape"):
        adamw_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, st, 1e-3)


# ---------------------------------------------------------------- schedule

def test_one_cycle_endpoints_and_peak():
    assert one_cycle_lr(0, 1000, 2e-4) == pytest.approx(2e-4 / 25, rel=1e-15)
    assert one_cycle_lr(300, 1000, 2e-4) == 2e-4
    assert one_cycle_lr(1000, 1000, 2e-4) == pytest.approx(2e-4 / 1e4, rel=1e-12)
    with pytest.raises(ValueError):
        one_cycle_lr(1001, 1000, 2e-4)


@pytest.mark.parametrize("total", [1000, 2250, 5000])
def test_one_cycle_continuity(total):
    lr = np.array([one_cycle_lr(s, total, 2e-4) for s in range(total + 1)])
    assert np.max(np.abs(np.diff(lr))) < 2e-4 / 100
    assert lr.max() == 2e-4 and lr.min() > 0


# ---------------------------------------------------------------- checkpoint container

def test_checkpoint_roundtrip(tmp_path, rng):
    arrays = {"a": rng.standard_normal((3, 2)), "b": np.array(1.5), "c": rng.standard_normal(7)}
    save_checkpoint(str(tmp_path / "c.bin"), arrays, {"step": 4})
    back, meta = load_checkpoint(str(tmp_path / "c.bin"))
    assert meta == {"step": 4}
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])
    raw = (tmp_path / "c.bin").read_bytes()
    assert raw[:8] == b"SMCKPT01"


def test_checkpoint_errors(tmp_path, rng):
    path = str(tmp_path / "c.bin")
    save_checkpoint(path, {"a": rng.standard_normal(10)}, {})
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(path)
    open(path, "wb").write(b"NOTACKPT" + raw[8:])
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


# ---------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ValueError, match="multiple of 4"):
        TrainConfig(d_max=30)
    with pytest.raises(ValueError, match="loss_weights"):
        TrainConfig(loss_weights=(1, -1, 1, 1))
    with pytest.raises(ValueError, match="batch_size"):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError, match="unknown config keys: colour"):
        TrainConfig.from_dict({"colour": 1})
    with pytest.raises(ValueError, match="backbone"):
        TrainConfig(backbone="resnet")
    with pytest.raises(ValueError, match="crop"):
        TrainConfig(crop=(20, 64))


def test_config_defaults_and_json(tmp_path):
    cfg = TrainConfig()
    assert (cfg.lr_max, cfg.weight_decay, cfg.betas) == (2e-4, 1e-4, (0.9, 0.999))
    assert cfg.loss_weights == (0.5, 0.5, 0.7, 1.0) and cfg.d_max % 4 == 0
    cfg.save(str(tmp_path / "c.json"))
    assert TrainConfig.load(str(tmp_path / "c.json")).fingerprint() == cfg.fingerprint()


# ---------------------------------------------------------------- trainer

def run(cfg_dict, data, out_dir=None, stop_after=None):
    tr = Trainer(TrainConfig.from_dict(cfg_dict), out_dir, data=data)
    return tr, tr.train(stop_after=stop_after)


def test_training_is_deterministic(tiny_data):
    _, a = run(tiny_config(), tiny_data)
    _, b = run(tiny_config(), tiny_data)
    assert a.losses == b.losses and len(a.losses) == 6
    assert all(math.isfinite(v) for v in a.losses)


def test_resume_matches_uninterrupted_run(tiny_data, tmp_path):
    full, res = run(tiny_config(), tiny_data, str(tmp_path / "full"))
    part, _ = run(tiny_config(), tiny_data, str(tmp_path / "part"), stop_after=2)
    resumed = Trainer(TrainConfig.from_dict(tiny_config()), str(tmp_path / "part"), data=tiny_data)
    resumed.load(str(tmp_path / "part" / "checkpoint.bin"))
    assert resumed.step == 2
    res2 = resumed.train()
    assert res2.losses == res.losses
    for n, p in full.params.items():
        np.testing.assert_array_equal(resumed.params[n].data, p.data)
    assert (tmp_path / "full" / "losses.csv").read_bytes() == (tmp_path / "part" / "losses.csv").read_bytes()


def test_resume_rejects_other_config(tiny_data, tmp_path):
    run(tiny_config(), tiny_data, str(tmp_path), stop_after=1)
    other = Trainer(TrainConfig.from_dict(tiny_config(seed=4)), None, data=tiny_data)
    with pytest.raises(ValueError, match="fingerprint"):
        other.load(str(tmp_path / "checkpoint.bin"))


def test_one_step_updates_every_parameter(tiny_data):
    tr = Trainer(TrainConfig.from_dict(tiny_config()), None, data=tiny_data)
    before = {n: p.data.copy() for n, p in tr.params.items()}
    tr.train_step(tr.batch_for(0))
    for n, p in tr.params.items():
        if p.grad is not None and np.any(p.grad != 0):
            assert np.any(p.data != before[n]), n
        else:
            np.testing.assert_array_equal(p.data, before[n] * (1 - tr.lr(0) * tr.cfg.weight_decay))


def test_inference_range_and_reload(tiny_data, tmp_path):
    tr, _ = run(tiny_config(epochs=1), tiny_data, str(tmp_path))
    model, stats, cfg = load_model(str(tmp_path / "checkpoint.bin"))
    d = predict(model, tiny_data[1], stats)
    assert d.shape == (2, 32, 64)
    assert d.min() >= 0 and d.max() <= cfg.d_max - 1
    np.testing.assert_array_equal(d, predict(tr.model, tiny_data[1], tr.stats))


def test_untrained_range_on_random_pairs(rng):
    model = StereoMamba(ModelConfig(d_max=16, hourglass_count=1, head_hidden=4,
                                    features=BackboneConfig(**SMALL_FEATURES)), seed=1)
    L, R = rng.standard_normal((2, 2, 3, 32, 48)) * 5
    d = model(Tensor(L), Tensor(R), all_outputs=False)[-1].data
    assert d.min() >= 0 and d.max() <= 15


def test_evaluate_reports_means(tiny_data):
    tr, _ = run(tiny_config(epochs=1), tiny_data)
    rows, agg, preds = tr.evaluate(with_warp=True)
    assert len(rows) == 2 and preds.shape == (2, 32, 64)
    assert agg["epe"] == pytest.approx(np.mean([r["epe"] for r in rows]))
    assert 0 <= agg["ssim"] <= 1


# ---------------------------------------------------------------- ablation

def test_ablation_rows(tiny_data, tmp_path):
    rows = ablation_run(TrainConfig.from_dict(tiny_config(epochs=1)), str(tmp_path))
    assert [r["variant"] for r in rows] == list(ABLATION_VARIANTS)
    assert all(math.isfinite(r["epe"]) for r in rows)
    assert (tmp_path / "ablation.csv").read_text().count("\n") == 4


def test_plain_cnn_swaps_only_the_extractor():
    base = dict(d_max=16, hourglass_count=1, features=BackboneConfig(**SMALL_FEATURES))
    a = dict(StereoMamba(ModelConfig(backbone="fe_mamba", **base)).named_parameters())
    b = dict(StereoMamba(ModelConfig(backbone="plain_cnn", **base)).named_parameters())
    rest_a = {n: p.shape for n, p in a.items() if not n.startswith("extractor.")}
    rest_b = {n: p.shape for n, p in b.items() if not n.startswith("extractor.")}
    assert rest_a == rest_b and rest_a
    assert {n for n in a if n.startswith("extractor.")} != {n for n in b if n.startswith("extractor.")}


def test_no_mff_feeds_f1_only():
    cfg = ModelConfig(d_max=16, mff_enabled=False, features=BackboneConfig(**SMALL_FEATURES))
    m = StereoMamba(cfg)
    assert m.mff is None and cfg.fused_channels_total() == 8
    assert not any(n.startswith("mff.") for n, _ in m.named_parameters())


# ---------------------------------------------------------------- full-model gradients

def tiny_model(rng):
    cfg = ModelConfig(d_max=16, groups=4, fused_channels=8, agg_channels=4, hourglass_count=1,
                      head_hidden=4, features=BackboneConfig(**SMALL_FEATURES))
    m = StereoMamba(cfg, seed=3)
    # zero biases leave ReLUs exactly on their kink where the volume is zero (x < d)
    for n, p in m.named_parameters():
        if n.endswith("bias"):
            p.data += rng.normal(0, 0.1, p.shape)
    return m


def test_full_tiny_model_parameter_gradients(rng):
    m = tiny_model(rng)
    L, R = rng.standard_normal((2, 1, 3, 32, 64))
    proj = rng.standard_normal((1, 32, 64))
    ref = [o.data.copy() for o in m(Tensor(L), Tensor(R))]

    def loss():
        return sum(((o - Tensor(r)) * Tensor(proj)).sum() for o, r in zip(m(Tensor(L), Tensor(R)), ref))

    assert m.cost_volume(Tensor(L), Tensor(R)).shape == (1, 4, 4, 8, 16)
    assert param_direction_check(m, loss) == []


def test_full_tiny_model_input_gradients(rng):
    m = tiny_model(rng)
    L, R = rng.standard_normal((2, 1, 3, 32, 64))
    ok, worst, _ = gradcheck(lambda l, r: m(l, r)[-1], [L, R], step=3e-5, max_coords=24)
    assert ok, worst
