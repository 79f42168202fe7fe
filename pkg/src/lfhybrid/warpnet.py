"""Warping branch: estimate HR disparity per side view and inverse-warp the central view.

The U-Net sees all LR side views stacked on channels and emits one LR
disparity map per side view.  Those are bicubically upsampled (values scaled
by ``alpha`` so they are in HR pixels), refined with HR central-view features
through a shared per-view dense block, and used to warp the HR central view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .fusion import side_view_l1
from .layers import Params, add_conv, add_dense_block, conv, dense_block
from .lightfield import HybridInput, LightField


@dataclass
class WarpNetConfig:
    unet_levels: int = 3
    base_width: int = 32
    dense_layers: int = 4
    growth: int = 16
    feat_layers: int = 2
    scale: int = 4

    def __post_init__(self):
        if self.scale not in (2, 4, 8):
            raise ValueError("scale must be 2, 4 or 8")
        if self.unet_levels < 1 or self.base_width < 1 or self.feat_layers < 1:
            raise ValueError("widths and depths must be positive")


def _level_width(cfg: WarpNetConfig, i: int) -> int:
    return cfg.base_width * 2**i


def init_params(cfg: WarpNetConfig, n_views: int, rng, dtype=np.float32, prefix: str = "warp") -> Params:
    p: Params = {}
    w = cfg.base_width
    cin = n_views
    for i in range(cfg.unet_levels):
        cw = _level_width(cfg, i)
        add_conv(p, f"{prefix}.enc{i}a", cin, cw, 3, rng, dtype)
        add_conv(p, f"{prefix}.enc{i}b", cw, cw, 3, rng, dtype)
        cin = cw
    for i in reversed(range(cfg.unet_levels - 1)):
        cw = _level_width(cfg, i)
        add_conv(p, f"{prefix}.up{i}", _level_width(cfg, i + 1), 4 * cw, 3, rng, dtype)
        add_conv(p, f"{prefix}.dec{i}", 2 * cw, cw, 3, rng, dtype)
    add_conv(p, f"{prefix}.disp", w, n_views, 3, rng, dtype)
    cin = 1
    for i in range(cfg.feat_layers):
        add_conv(p, f"{prefix}.dfeat{i}", cin, w, 3, rng, dtype)
        add_conv(p, f"{prefix}.hfeat{i}", cin, w, 3, rng, dtype)
        cin = w
    add_dense_block(p, f"{prefix}.refine", 2 * w, cfg.growth, cfg.dense_layers, w, rng, dtype)
    add_conv(p, f"{prefix}.res", w, 1, 3, rng, dtype)
    add_conv(p, f"{prefix}.attn", w, 1, 3, rng, dtype)
    return p


def unet(x: Tensor, params: Params, cfg: WarpNetConfig, prefix: str = "warp") -> Tensor:
    """Stride-2 encoder, pixel-shuffle decoder, skip concatenation."""
    H, W = x.shape[-2:]
    m = 2 ** (cfg.unet_levels - 1)
    x = ad.pad_reflect(x, (-H) % m, (-W) % m)
    skips = []
    f = x
    for i in range(cfg.unet_levels):
        f = conv(f, params, f"{prefix}.enc{i}a", stride=1 if i == 0 else 2)
        f = conv(f, params, f"{prefix}.enc{i}b")
        skips.append(f)
    for i in reversed(range(cfg.unet_levels - 1)):
        f = ad.pixel_shuffle(conv(f, params, f"{prefix}.up{i}"), 2)
        f = conv(ad.concat([f, skips[i]]), params, f"{prefix}.dec{i}")
    out = conv(f, params, f"{prefix}.disp", act=False)
    return ad.crop(out, H, W)


def estimate_disparity(
    hybrid: HybridInput, params: Params, cfg: WarpNetConfig, prefix: str = "warp"
) -> tuple[Tensor, Tensor, Tensor]:
    """Returns ``(d_init, d_h, refine_features)``; disparities are ``(V, 1, aH, aW)``."""
    side = hybrid.side_views
    V, C, h, w = side.shape
    if C != 1:
        raise ValueError("Warp-Net runs on a single channel")
    if hybrid.scale != cfg.scale:
        raise ValueError(f"config scale {cfg.scale} != input scale {hybrid.scale}")
    if params[f"{prefix}.enc0a.w"].shape[1] != V:
        raise ValueError(f"parameters built for {params[f'{prefix}.enc0a.w'].shape[1]} views, got {V}")
    dtype = params[f"{prefix}.enc0a.w"].dtype
    a = cfg.scale

    d_lr = unet(Tensor(side.reshape(1, V, h, w).astype(dtype)), params, cfg, prefix)
    d_init = ad.reshape(ad.upsample_bicubic(d_lr, a, disparity=True), (V, 1, h * a, w * a))

    fd = d_init
    fh = Tensor(hybrid.central_hr[None].astype(dtype))
    for i in range(cfg.feat_layers):
        fd = conv(fd, params, f"{prefix}.dfeat{i}")
        fh = conv(fh, params, f"{prefix}.hfeat{i}")
    feats = dense_block(ad.concat([fd, ad.repeat(fh, V)]), params, f"{prefix}.refine", cfg.dense_layers)
    d_h = ad.add(d_init, conv(feats, params, f"{prefix}.res", act=False))
    return d_init, d_h, feats


def forward(
    hybrid: HybridInput, params: Params, cfg: WarpNetConfig, prefix: str = "warp"
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Returns ``(views, logits, d_h, d_init)``, all ``(V, 1, aH, aW)``."""
    d_init, d_h, feats = estimate_disparity(hybrid, params, cfg, prefix)
    logits = conv(feats, params, f"{prefix}.attn", act=False)
    central = Tensor(hybrid.central_hr[None].astype(d_h.dtype))
    views = ad.warp_bicubic(central, d_h, hybrid.offsets())
    return views, logits, d_h, d_init


def warp_loss(pred: Tensor, gt: LightField) -> Tensor:
    return side_view_l1(pred, gt)
