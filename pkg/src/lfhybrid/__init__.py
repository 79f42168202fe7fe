"""Hybrid light-field super-resolution: one HR central view plus LR side views."""

from .lightfield import DisparityField, HybridInput, LightField, bicubic_resize, extract_epi, structure_residual
from .model import HybridLFNet, ModelConfig
from .reconstruct import reconstruct
from .train import TrainConfig, fit, load_checkpoint, save_checkpoint

__all__ = [
    "DisparityField",
    "HybridInput",
    "HybridLFNet",
    "LightField",
    "ModelConfig",
    "TrainConfig",
    "bicubic_resize",
    "extract_epi",
    "fit",
    "load_checkpoint",
    "reconstruct",
    "save_checkpoint",
    "structure_residual",
]
