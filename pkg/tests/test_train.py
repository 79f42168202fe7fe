import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfhybrid.autodiff import Tensor
from lfhybrid.data import random_scene, render_scene
from lfhybrid.model import HybridLFNet, ModelConfig
from lfhybrid.train import (
    AdamState,
    CheckpointError,
    NumericalError,
    Scene,
    TrainConfig,
    adam_step,
    fit,
    load_checkpoint,
    load_run_config,
    lr_at,
    save_checkpoint,
)

TINY = ModelConfig(scale=2, sr_width=4, sr_dense_layers=1, sr_growth=2, sr_hr_layers=1,
                   warp_levels=2, warp_width=4, warp_dense_layers=1, warp_growth=2, warp_feat_layers=1)


def scalar_adam(x0, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam on f(x) = x^2, written out for one scalar."""
    x, m, v, trace = x0, 0.0, 0.0, []
    for t in range(1, steps + 1):
        g = 2 * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        trace.append(x)
    return trace


def test_adam_first_step_is_signed_lr():
    p = {"x": Tensor(np.array([0.5, -2.0, 3.0]), requires_grad=True)}
    p["x"].grad = np.array([0.3, -7.0, 1e-3])
    adam_step(p, AdamState(), 0.01)
    np.testing.assert_allclose(p["x"].data, [0.5 - 0.01, -2.0 + 0.01, 3.0 - 0.01], atol=1e-7)


def test_adam_zero_grad_keeps_params():
    p = {"x": Tensor(np.array([1.0, 2.0]), requires_grad=True)}
    p["x"].grad = np.zeros(2)
    st_ = AdamState()
    adam_step(p, st_, 0.1)
    np.testing.assert_array_equal(p["x"].data, [1.0, 2.0])
    assert st_.t == 1


def test_adam_scalar_oracle_ten_steps():
    x = Tensor(np.array(1.0), requires_grad=True)
    state = AdamState()
    got = []
    for _ in range(10):
        x.grad = 2 * x.data
        adam_step({"x": x}, state, 0.1)
        got.append(float(x.data))
    ref = scalar_adam(1.0, 0.1, 10)
    assert max(abs(a - b) for a, b in zip(got, ref)) < 1e-10
    assert all(abs(b) < abs(a) for a, b in zip([1.0] + got, got))


def test_lr_schedule():
    c = TrainConfig()
    assert lr_at(0, c) == 1e-4
    assert lr_at(250, c) == 5e-5
    assert lr_at(749, c) == 2.5e-5


@given(st.integers(0, 5000), st.integers(0, 5000), st.integers(1, 400))
def test_lr_non_increasing(a, b, period):
    c = TrainConfig(decay_period=period)
    lo, hi = sorted((a, b))
    assert lr_at(hi, c) <= lr_at(lo, c)


def tiny_dataset():
    out = []
    for s, ds in enumerate([[0.5], [-0.5, 1.0]]):
        lf, d, _ = render_scene(random_scene(s, 16, 16, disparities=ds, texture_sigma=1.5), 3, 3)
        out.append(Scene(lf, d))
    return out


def test_fit_lr_zero_keeps_params(tmp_path):
    net = HybridLFNet(TINY, seed=1)
    before = {k: p.data.copy() for k, p in net.params.items()}
    res = fit(net, tiny_dataset(), TrainConfig(lr0=0.0, patch_size=16, scale=2), iterations=1,
              log_path=tmp_path / "log.csv", check_coverage=True)
    for k, p in net.params.items():
        np.testing.assert_array_equal(p.data, before[k])
    assert len(res.log) == 1 and res.log[0]["total"] > 0
    rows = list(csv.DictReader(open(tmp_path / "log.csv")))
    assert len(rows) == 1 and float(rows[0]["total"]) == pytest.approx(res.log[0]["total"])


def test_fit_is_deterministic():
    cfg = TrainConfig(lr0=1e-3, patch_size=12, scale=2, seed=4)
    curves = []
    for _ in range(2):
        net = HybridLFNet(TINY, seed=2)
        curves.append([r["total"] for r in fit(net, tiny_dataset(), cfg, iterations=4).log])
    assert max(abs(a - b) for a, b in zip(*curves)) < 1e-6


def test_fit_non_finite_aborts():
    net = HybridLFNet(TINY, seed=0)
    net.params["sr.out.b"].data[...] = np.nan
    with pytest.raises(NumericalError, match="iteration 0"):
        fit(net, tiny_dataset(), TrainConfig(patch_size=16, scale=2), iterations=1)


def test_fit_scale_mismatch():
    with pytest.raises(ValueError):
        fit(HybridLFNet(TINY), tiny_dataset(), TrainConfig(scale=4, patch_size=16), iterations=1)


def test_checkpoint_round_trip(tmp_path):
    net = HybridLFNet(TINY, seed=3)
    res = fit(net, tiny_dataset(), TrainConfig(lr0=1e-3, patch_size=16, scale=2), iterations=2)
    path = tmp_path / "m.ckpt"
    save_checkpoint(net.params, res.state, TINY, path)
    ck = load_checkpoint(path)
    assert ck.config == TINY and ck.state.t == 2
    clone = ck.model()
    from lfhybrid.data import simulate_hybrid
    from lfhybrid.reconstruct import inference

    hy, _ = simulate_hybrid(tiny_dataset()[1].lf, 2)
    with inference(net), inference(clone):
        a, b = net.forward(hy), clone.forward(hy)
    for name in ("fused", "sr", "warp", "d_h", "weight_sr"):
        np.testing.assert_array_equal(getattr(a, name).data, getattr(b, name).data)
    for k in net.params:
        np.testing.assert_array_equal(ck.state.m[k], res.state.m[k])


def test_checkpoint_errors(tmp_path):
    net = HybridLFNet(TINY)
    path = tmp_path / "m.ckpt"
    save_checkpoint(net.params, None, TINY, path)
    ck = load_checkpoint(path)
    ck.model()  # inference works without optimizer state
    with pytest.raises(CheckpointError, match="resume"):
        ck.resume_state()
    data = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(tmp_path / "bad")
    (tmp_path / "short").write_bytes(data[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "short")
    (tmp_path / "long").write_bytes(data + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "long")
    ck.tensors["sr.bogus.w"] = np.zeros(1, np.float32)
    with pytest.raises(CheckpointError, match="unknown tensor"):
        ck.model()


def test_run_config(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("lr0 = 5e-4\nscale=2\niterations=7\ngeometric_aug=false\nsr_width=6  # narrow\n")
    tc, mc = load_run_config(p)
    assert tc.lr0 == 5e-4 and tc.iterations == 7 and tc.geometric_aug is False
    assert mc.scale == 2 and mc.sr_width == 6
    p.write_text("nonsense=1\n")
    with pytest.raises(ValueError, match="unknown"):
        load_run_config(p)
