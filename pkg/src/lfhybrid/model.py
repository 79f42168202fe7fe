"""The full two-branch network: SR-Net + Warp-Net + attention fusion."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import srnet, warpnet
from .autodiff import Tensor
from .fusion import AttentionMaps, assemble_output, fuse
from .layers import Params
from .lightfield import HybridInput, LightField


@dataclass
class ModelConfig:
    scale: int = 4
    views_m: int = 3
    views_n: int = 3
    sr_width: int = 32
    sr_dense_layers: int = 4
    sr_growth: int = 16
    sr_hr_layers: int = 4
    warp_levels: int = 3
    warp_width: int = 32
    warp_dense_layers: int = 4
    warp_growth: int = 16
    warp_feat_layers: int = 2

    def __post_init__(self):
        if self.views_m % 2 == 0 or self.views_n % 2 == 0:
            raise ValueError("angular dims must be odd")
        self.sr()
        self.warp()

    @property
    def n_side(self) -> int:
        return self.views_m * self.views_n - 1

    def sr(self) -> srnet.SRNetConfig:
        return srnet.SRNetConfig(
            self.sr_width, self.sr_dense_layers, self.sr_growth, self.sr_hr_layers, self.scale
        )

    def warp(self) -> warpnet.WarpNetConfig:
        return warpnet.WarpNetConfig(
            self.warp_levels, self.warp_width, self.warp_dense_layers,
            self.warp_growth, self.warp_feat_layers, self.scale,
        )

    def to_dict(self) -> dict[str, str]:
        return {k: str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: int(v) for k, v in d.items() if k in names})


@dataclass
class ForwardOutputs:
    sr: Tensor
    warp: Tensor
    fused: Tensor
    logits_sr: Tensor
    logits_warp: Tensor
    weight_sr: Tensor
    weight_warp: Tensor
    d_init: Tensor
    d_h: Tensor

    def attention(self) -> AttentionMaps:
        return AttentionMaps(
            self.logits_sr.data, self.logits_warp.data, self.weight_sr.data, self.weight_warp.data
        )


class HybridLFNet:
    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        rng = np.random.default_rng(seed)
        V = config.n_side
        self.params: Params = {}
        self.params.update(srnet.init_params(config.sr(), V, rng, dtype))
        self.params.update(warpnet.init_params(config.warp(), V, rng, dtype))

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def check_input(self, hybrid: HybridInput):
        c = self.config
        if hybrid.scale != c.scale:
            raise ValueError(f"model scale {c.scale} does not match input scale {hybrid.scale}")
        if (hybrid.M, hybrid.N) != (c.views_m, c.views_n):
            raise ValueError(
                f"model expects {c.views_m}x{c.views_n} views, input has {hybrid.M}x{hybrid.N}"
            )

    def forward(self, hybrid: HybridInput) -> ForwardOutputs:
        self.check_input(hybrid)
        sr_views, sr_logits = srnet.forward(hybrid, self.params, self.config.sr())
        w_views, w_logits, d_h, d_init = warpnet.forward(hybrid, self.params, self.config.warp())
        fused, c_sr, c_warp = fuse(sr_views, w_views, sr_logits, w_logits)
        return ForwardOutputs(sr_views, w_views, fused, sr_logits, w_logits, c_sr, c_warp, d_init, d_h)

    def reconstruct_views(self, hybrid: HybridInput) -> tuple[LightField, ForwardOutputs]:
        out = self.forward(hybrid)
        return assemble_output(out.fused.data.astype(hybrid.central_hr.dtype), hybrid), out


@contextmanager
def inference(model: HybridLFNet):
    """Disable graph recording for the duration of the block."""
    flags = {k: p.requires_grad for k, p in model.params.items()}
    for p in model.params.values():
        p.requires_grad = False
    try:
        yield model
    finally:
        for k, p in model.params.items():
            p.requires_grad = flags[k]
