"""Orchestration: config, checkpoints, training loops, inference, evaluation, CLI."""

from .checkpoint import CheckpointArchive, module_to_tensors, tensors_to_module
from .config import PipelineConfig
from .data import AssetStore, lr_at, open_dataset
from .evaluate import MetricsReport, evaluate, psnr

__all__ = [
    "AssetStore", "CheckpointArchive", "MetricsReport", "PipelineConfig",
    "evaluate", "lr_at", "module_to_tensors", "open_dataset", "psnr",
    "tensors_to_module",
]
