"""Reconstruction driver: checkpoint + hybrid input -> HR light field (+ metrics)."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .fusion import AttentionMaps, assemble_output
from .lightfield import DisparityField, HybridInput, LightField
from .metrics import MetricsReport, evaluate
from .model import HybridLFNet, inference
from .srnet import bicubic_views
from .train import Checkpoint, NumericalError, load_checkpoint


@dataclass
class Reconstruction:
    lf: LightField
    attention: AttentionMaps
    d_h: DisparityField
    lf_sr: LightField
    lf_warp: LightField
    report: MetricsReport | None = None


def bicubic_baseline(hybrid: HybridInput) -> LightField:
    return assemble_output(bicubic_views(hybrid), hybrid)


def reconstruct(
    model: HybridLFNet | Checkpoint | str,
    hybrid: HybridInput,
    gt: LightField | None = None,
    with_epi: bool = True,
) -> Reconstruction:
    if isinstance(model, str):
        model = load_checkpoint(model)
    if isinstance(model, Checkpoint):
        model = model.model()
    model.check_input(hybrid)
    t0 = time.perf_counter()
    with inference(model):
        out = model.forward(hybrid)
    dt = time.perf_counter() - t0
    for name in ("fused", "d_h"):
        if not np.all(np.isfinite(getattr(out, name).data)):
            raise NumericalError(f"non-finite {name} in reconstruction")
    dtype = hybrid.central_hr.dtype

    def lf_of(t):
        return assemble_output(t.data.astype(dtype), hybrid)

    rec = Reconstruction(
        lf_of(out.fused),
        out.attention(),
        DisparityField(out.d_h.data.astype(np.float64), hybrid.side_coords),
        lf_of(out.sr),
        lf_of(out.warp),
    )
    if gt is not None:
        rec.report = evaluate(rec.lf, gt, with_epi=with_epi)
        rec.report.seconds = dt
    return rec
