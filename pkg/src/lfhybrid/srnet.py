"""Regression branch: super-resolve the LR side views with HR central-view guidance.

Pipeline per forward pass:

1. stack the ``V = MN - 1`` LR side views along channels, extract features with
   a dense block, then a 3x3 conv to ``alpha^2 * V * width`` channels and a
   pixel shuffle give one ``width``-channel HR feature slice per view;
2. a plain conv stack on the HR central view gives HR features, repeated for
   every side view;
3. per view (shared weights, views on the batch axis): concatenate both
   features, fuse with a dense block, then predict a residual added to the
   bicubic upsampling of the LR view, plus an attention logit map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .fusion import side_view_l1
from .layers import Params, add_conv, add_dense_block, conv, dense_block
from .lightfield import HybridInput, LightField, bicubic_resize


@dataclass
class SRNetConfig:
    base_width: int = 32
    dense_layers: int = 4
    growth: int = 16
    hr_layers: int = 4
    scale: int = 4

    def __post_init__(self):
        if self.scale not in (2, 4, 8):
            raise ValueError("scale must be 2, 4 or 8")
        if min(self.base_width, self.growth, self.hr_layers) < 1 or self.dense_layers < 0:
            raise ValueError("widths and depths must be positive")


def init_params(cfg: SRNetConfig, n_views: int, rng, dtype=np.float32, prefix: str = "sr") -> Params:
    w, g, L = cfg.base_width, cfg.growth, cfg.dense_layers
    p: Params = {}
    add_conv(p, f"{prefix}.lf_in", n_views, w, 3, rng, dtype)
    add_dense_block(p, f"{prefix}.lf_dense", w, g, L, w, rng, dtype)
    add_conv(p, f"{prefix}.up", w, cfg.scale**2 * n_views * w, 3, rng, dtype)
    cin = 1
    for i in range(cfg.hr_layers):
        add_conv(p, f"{prefix}.hr{i}", cin, w, 3, rng, dtype)
        cin = w
    add_dense_block(p, f"{prefix}.fuse", 2 * w, g, L, w, rng, dtype)
    add_conv(p, f"{prefix}.out", w, 1, 3, rng, dtype)
    add_conv(p, f"{prefix}.attn", w, 1, 3, rng, dtype)
    return p


def bicubic_views(hybrid: HybridInput, dtype=None) -> np.ndarray:
    """Bicubic upsampling of every side view, ``(V, C, aH, aW)``."""
    _, _, h, w = hybrid.side_views.shape
    a = hybrid.scale
    out = np.stack([bicubic_resize(v, h * a, w * a) for v in hybrid.side_views])
    return out if dtype is None else out.astype(dtype)


def forward(
    hybrid: HybridInput, params: Params, cfg: SRNetConfig, prefix: str = "sr"
) -> tuple[Tensor, Tensor]:
    """Returns ``(views, logits)``, both ``(V, 1, aH, aW)`` Tensors."""
    side = hybrid.side_views
    V, C, h, w = side.shape
    if C != 1:
        raise ValueError("SR-Net runs on a single channel")
    if hybrid.scale != cfg.scale:
        raise ValueError(f"config scale {cfg.scale} != input scale {hybrid.scale}")
    if params[f"{prefix}.lf_in.w"].shape[1] != V:
        raise ValueError(f"parameters built for {params[f'{prefix}.lf_in.w'].shape[1]} views, got {V}")
    dtype = params[f"{prefix}.lf_in.w"].dtype
    a = cfg.scale
    width = cfg.base_width

    x = Tensor(side.reshape(1, V, h, w).astype(dtype))
    f = conv(x, params, f"{prefix}.lf_in")
    f = dense_block(f, params, f"{prefix}.lf_dense", cfg.dense_layers)
    f = conv(f, params, f"{prefix}.up")
    f = ad.pixel_shuffle(f, a)
    f_lf = ad.reshape(f, (V, width, h * a, w * a))

    hr = Tensor(hybrid.central_hr[None].astype(dtype))
    for i in range(cfg.hr_layers):
        hr = conv(hr, params, f"{prefix}.hr{i}")
    f_hr = ad.repeat(hr, V)

    fused = dense_block(ad.concat([f_lf, f_hr]), params, f"{prefix}.fuse", cfg.dense_layers)
    residual = conv(fused, params, f"{prefix}.out", act=False)
    logits = conv(fused, params, f"{prefix}.attn", act=False)
    views = ad.add(residual, Tensor(bicubic_views(hybrid, dtype)))
    return views, logits


def srnet_loss(pred: Tensor, gt: LightField) -> Tensor:
    return side_view_l1(pred, gt)
