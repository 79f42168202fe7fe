"""Attention-guided fusion of the two branches, output assembly and the training losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .lightfield import HybridInput, LightField


@dataclass
class LossWeights:
    edge: float = 150.0
    smooth: float = 0.1

    def __post_init__(self):
        if self.edge < 0 or self.smooth < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class AttentionMaps:
    """Per-side-view logits and their softmax-normalized weights, ``(V, 1, H, W)``."""

    logits_sr: np.ndarray
    logits_warp: np.ndarray
    weight_sr: np.ndarray
    weight_warp: np.ndarray


def fuse(sr: Tensor, warp: Tensor, logits_sr: Tensor, logits_warp: Tensor):
    """Returns ``(fused, weight_sr, weight_warp)``."""
    if not (sr.shape == warp.shape == logits_sr.shape == logits_warp.shape):
        raise ValueError("fusion inputs must share one shape")
    c_sr, c_warp = ad.softmax_pair(logits_sr, logits_warp)
    fused = ad.add(ad.mul(sr, c_sr), ad.mul(warp, c_warp))
    return fused, c_sr, c_warp


def side_targets(gt: LightField) -> np.ndarray:
    return np.stack([gt.views[uv] for uv in gt.side_coords])


def side_view_l1(pred: Tensor, gt: LightField | np.ndarray) -> Tensor:
    """Mean absolute error over side views (``gt`` may be a prepared ``(V, C, H, W)`` stack)."""
    target = side_targets(gt) if isinstance(gt, LightField) else gt
    return ad.l1_loss(pred, target)


def assemble_output(side_views, hybrid: HybridInput) -> LightField:
    """Place ``MN - 1`` HR side views around the untouched HR central view."""
    sv = np.asarray(side_views.data if isinstance(side_views, Tensor) else side_views)
    coords = hybrid.side_coords
    if sv.shape[0] != len(coords):
        raise ValueError(f"expected {len(coords)} side views, got {sv.shape[0]}")
    central = hybrid.central_hr
    if sv.shape[1:] != central.shape:
        raise ValueError("side views must match the central view shape")
    views = np.empty((hybrid.M, hybrid.N) + central.shape, dtype=np.result_type(sv, central))
    for uv, img in zip(coords, sv):
        views[uv] = img
    views[hybrid.central_coord] = central
    return LightField(views)


def disassemble(lf: LightField) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`assemble_output`: ``(side_views, central)``."""
    return side_targets(lf), lf.central.copy()


def smoothness_loss(d_h: Tensor, edge_image, lam: float = 150.0) -> Tensor:
    """Edge-aware disparity smoothness; ``edge_image`` is ``(V, 1, H, W)`` or one shared map."""
    img = np.asarray(edge_image)
    if img.shape[-2:] != d_h.shape[-2:]:
        raise ValueError("edge image must match the disparity resolution")
    return ad.edge_aware_smoothness(d_h, img, lam)


def total_loss(
    fused: Tensor,
    sr: Tensor,
    warp: Tensor,
    d_h: Tensor,
    gt: LightField | np.ndarray,
    weights: LossWeights | None = None,
):
    """Sum of three mean-L1 terms plus the weighted smoothness term.

    Returns ``(loss, terms)`` where ``terms`` maps term names to floats.
    The ground-truth side views double as edge images for smoothness.
    """
    weights = weights or LossWeights()
    target = side_targets(gt) if isinstance(gt, LightField) else np.asarray(gt)
    l_fusion = ad.l1_loss(fused, target)
    l_sr = ad.l1_loss(sr, target)
    l_warp = ad.l1_loss(warp, target)
    l_smooth = smoothness_loss(d_h, target, weights.edge)
    loss = ad.add(ad.add(ad.add(l_fusion, l_sr), l_warp), ad.scale(l_smooth, weights.smooth))
    terms = {
        "l_fusion": float(l_fusion.data),
        "l_sr": float(l_sr.data),
        "l_warp": float(l_warp.data),
        "l_smooth": float(l_smooth.data),
        "total": float(loss.data),
    }
    return loss, terms
