"""Geometry-aware color point cloud VAE."""

from .losses import vae_loss
from .model import (ColorLatentSet, ColorPosterior, ColorVAE, FieldSample,
                    GeoLatentSet, VAEConfig, kl_divergence, reparameterize,
                    select_queries)

__all__ = [
    "ColorLatentSet", "ColorPosterior", "ColorVAE", "FieldSample", "GeoLatentSet",
    "VAEConfig", "kl_divergence", "reparameterize", "select_queries", "vae_loss",
]
