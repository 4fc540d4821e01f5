"""Differentiable building blocks shared by the VAE and the DiT."""

from .blocks import (AdaLNDiTBlock, AttentionBlockConfig, CrossAttentionBlock,
                     FrequencyEmbed, MLP, MultiheadCrossAttention,
                     MultiheadSelfAttention, SelfAttentionBlock, TimestepEmbed,
                     rope3d, sinusoidal_time_features)
from .gradcheck import grad_check, module_grad_check

__all__ = [
    "AdaLNDiTBlock", "AttentionBlockConfig", "CrossAttentionBlock",
    "FrequencyEmbed", "MLP", "MultiheadCrossAttention", "MultiheadSelfAttention",
    "SelfAttentionBlock", "TimestepEmbed", "grad_check", "module_grad_check",
    "rope3d", "sinusoidal_time_features",
]
