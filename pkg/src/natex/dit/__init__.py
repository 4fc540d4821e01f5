"""Multi-control rectified-flow diffusion transformer."""

from .flow import cfg_velocity, flow_path, sample
from .model import (ColorDiT, ConditionBundle, DiTConfig, assemble_tokens,
                    prepare_condition_patches, sincos_position_grid)
from .training import DiTBatch, PlateauDetector, train_step

__all__ = [
    "ColorDiT", "ConditionBundle", "DiTBatch", "DiTConfig", "PlateauDetector",
    "assemble_tokens", "cfg_velocity", "flow_path", "prepare_condition_patches",
    "sample", "sincos_position_grid", "train_step",
]
