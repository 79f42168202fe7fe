import numpy as np
import pytest

from lfhybrid import autodiff as ad
from lfhybrid import srnet, warpnet
from lfhybrid.autodiff import Tensor, grad_check
from lfhybrid.data import random_scene, render_scene, simulate_hybrid
from lfhybrid.fusion import side_targets
from lfhybrid.layers import zero_params
from lfhybrid.lightfield import HybridInput, LightField, bicubic_resize
from lfhybrid.metrics import psnr
from lfhybrid.model import HybridLFNet, ModelConfig

TINY_SR = srnet.SRNetConfig(base_width=4, dense_layers=1, growth=2, hr_layers=1, scale=2)
TINY_WARP = warpnet.WarpNetConfig(unet_levels=2, base_width=2, dense_layers=1, growth=2, feat_layers=1, scale=2)


def hybrid(seed=0, h=16, w=16, alpha=2):
    rng = np.random.default_rng(seed)
    return HybridInput(rng.uniform(size=(1, h * alpha, w * alpha)), rng.uniform(size=(8, 1, h, w)), 3, 3, alpha)


def randomize(params, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.data[...] = rng.normal(scale=scale, size=p.shape)


def weighted(t, seed):
    return ad.total(ad.mul(t, Tensor(np.random.default_rng(seed).normal(size=t.shape))))


# ---------------------------------------------------------------- SR-Net


def test_srnet_zero_params_gives_bicubic():
    hy = hybrid()
    cfg = srnet.SRNetConfig(base_width=8, dense_layers=2, growth=4, hr_layers=2, scale=2)
    params = srnet.init_params(cfg, 8, np.random.default_rng(0), np.float64)
    zero_params(params)
    views, logits = srnet.forward(hy, params, cfg)
    expect = np.stack([bicubic_resize(v, 32, 32) for v in hy.side_views])
    np.testing.assert_array_equal(views.data, expect)
    assert np.all(logits.data == 0)


@pytest.mark.parametrize("alpha", [2, 4])
def test_srnet_shapes(alpha):
    hy = hybrid(h=8, w=12, alpha=alpha)
    cfg = srnet.SRNetConfig(base_width=4, dense_layers=1, growth=2, hr_layers=1, scale=alpha)
    params = srnet.init_params(cfg, 8, np.random.default_rng(0))
    views, logits = srnet.forward(hy, params, cfg)
    assert views.shape == logits.shape == (8, 1, 8 * alpha, 12 * alpha)


def test_srnet_grad_check_all_params():
    hy = hybrid(1, 8, 8)
    params = srnet.init_params(TINY_SR, 8, np.random.default_rng(1), np.float64)
    randomize(params, 2)

    def fn():
        v, lg = srnet.forward(hy, params, TINY_SR)
        return ad.add(weighted(v, 3), weighted(lg, 4))

    assert grad_check(fn, list(params.values()), max_coords=4) < 1e-4


def test_srnet_errors():
    params = srnet.init_params(TINY_SR, 8, np.random.default_rng(0))
    with pytest.raises(ValueError):
        srnet.forward(hybrid(alpha=4, h=4, w=4), params, TINY_SR)
    rgb = HybridInput(np.zeros((3, 8, 8)), np.zeros((8, 3, 4, 4)), 3, 3, 2)
    with pytest.raises(ValueError):
        srnet.forward(rgb, params, TINY_SR)
    with pytest.raises(ValueError):
        srnet.SRNetConfig(scale=3)


def test_srnet_step_decreases_loss():
    sc = random_scene(3, 16, 16, disparities=[0.5], texture_sigma=1.5)
    lf, _, _ = render_scene(sc, 3, 3)
    hy, gt = simulate_hybrid(lf, 2)
    params = srnet.init_params(TINY_SR, 8, np.random.default_rng(5), np.float64)
    randomize(params, 6, 0.1)

    def loss():
        return srnet.srnet_loss(srnet.forward(hy, params, TINY_SR)[0], gt)

    base = loss()
    base.backward()
    # the attention head does not feed this loss and keeps no gradient
    grads = {k: np.zeros_like(p.data) if p.grad is None else p.grad.copy() for k, p in params.items()}
    start = {k: p.data.copy() for k, p in params.items()}
    decreased = []
    for lr in (1e-2, 1e-3, 1e-4):
        for k, p in params.items():
            p.data[...] = start[k] - lr * grads[k]
        decreased.append(float(loss().data) < float(base.data))
    assert any(decreased)


# ---------------------------------------------------------------- Warp-Net


def test_warpnet_zero_params():
    hy = hybrid(2)
    cfg = warpnet.WarpNetConfig(unet_levels=3, base_width=4, dense_layers=1, growth=2, feat_layers=1, scale=2)
    params = warpnet.init_params(cfg, 8, np.random.default_rng(0), np.float64)
    zero_params(params)
    views, logits, d_h, d_init = warpnet.forward(hy, params, cfg)
    assert d_init.shape == d_h.shape == (8, 1, 32, 32)
    assert np.all(d_init.data == 0) and np.all(d_h.data == 0)
    for v in views.data:
        np.testing.assert_array_equal(v, hy.central_hr)
    assert np.all(logits.data == 0)


def test_warpnet_odd_sizes_are_padded():
    hy = hybrid(3, 7, 9)
    params = warpnet.init_params(TINY_WARP, 8, np.random.default_rng(0))
    views, _, d_h, _ = warpnet.forward(hy, params, TINY_WARP)
    assert views.shape == d_h.shape == (8, 1, 14, 18)


def test_warpnet_grad_check_unet_params():
    hy = hybrid(4, 4, 4)
    params = warpnet.init_params(TINY_WARP, 8, np.random.default_rng(1), np.float64)
    randomize(params, 7, 0.2)
    unet_keys = [k for k in params if ".enc" in k or ".up" in k or ".dec" in k or ".disp" in k]

    def fn():
        v, lg, dh, _ = warpnet.forward(hy, params, TINY_WARP)
        return ad.add(weighted(v, 8), weighted(dh, 9))

    assert grad_check(fn, [params[k] for k in unet_keys], max_coords=3) < 1e-3


def test_injected_true_disparity_reconstructs_views():
    sc = random_scene(8, 48, 48, disparities=[1.5])
    lf, d, _ = render_scene(sc, 3, 3)
    hy, gt = simulate_hybrid(lf, 2)
    disp = Tensor(np.broadcast_to(d, (8, 1, 48, 48)).copy())
    views = ad.warp_bicubic(Tensor(hy.central_hr[None]), disp, hy.offsets()).data
    inner = slice(4, -4)
    for pred, ref in zip(views, side_targets(gt)):
        assert psnr(pred[0, inner, inner], ref[0, inner, inner]) > 40


def test_warp_integer_disparity_equivariance():
    hy = hybrid(5, 8, 8)
    # only the horizontal neighbour (1, 2) with offset (0, 1)
    k = hy.side_coords.index((1, 2))
    disp = Tensor(np.full((1, 1, 16, 16), 2.0))
    out = ad.warp_bicubic(Tensor(hy.central_hr[None]), disp, hy.offsets()[k : k + 1]).data[0, 0]
    np.testing.assert_array_equal(out[:, 2:], hy.central_hr[0][:, :-2])


# ---------------------------------------------------------------- assembled model


def test_model_zero_params_semantics():
    cfg = ModelConfig(scale=2, sr_width=4, sr_dense_layers=1, sr_growth=2, sr_hr_layers=1,
                      warp_levels=2, warp_width=4, warp_dense_layers=1, warp_growth=2, warp_feat_layers=1)
    net = HybridLFNet(cfg, dtype=np.float64)
    zero_params(net.params)
    hy = hybrid(6, 8, 8)
    lf, out = net.reconstruct_views(hy)
    bic = np.stack([bicubic_resize(v, 16, 16) for v in hy.side_views])
    np.testing.assert_array_equal(out.sr.data, bic)
    for v in out.warp.data:
        np.testing.assert_array_equal(v, hy.central_hr)
    np.testing.assert_array_equal(out.fused.data, 0.5 * bic + 0.5 * hy.central_hr[None])
    np.testing.assert_array_equal(lf.central, hy.central_hr)


def test_model_rejects_mismatched_input():
    net = HybridLFNet(ModelConfig(scale=2, sr_width=4, warp_width=4))
    with pytest.raises(ValueError, match="scale"):
        net.forward(hybrid(alpha=4, h=4, w=4))
    five = HybridInput(np.zeros((1, 16, 16)), np.zeros((24, 1, 8, 8)), 5, 5, 2)
    with pytest.raises(ValueError, match="views"):
        net.forward(five)


def test_every_parameter_gets_a_gradient():
    from lfhybrid.autodiff import unreached
    from lfhybrid.fusion import total_loss

    cfg = ModelConfig(scale=2, sr_width=4, sr_dense_layers=1, sr_growth=2, sr_hr_layers=1,
                      warp_levels=2, warp_width=4, warp_dense_layers=1, warp_growth=2, warp_feat_layers=1)
    net = HybridLFNet(cfg)
    hy = hybrid(7, 8, 8)
    gt = LightField(np.random.default_rng(0).uniform(size=(3, 3, 1, 16, 16)))
    out = net.forward(hy)
    loss, _ = total_loss(out.fused, out.sr, out.warp, out.d_h, gt)
    loss.backward()
    assert unreached(net.params) == []
