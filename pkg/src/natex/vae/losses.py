"""Composite VAE objective: KL + color regression + truncated-UDF occupancy."""

from __future__ import annotations

import torch

from .model import ColorPosterior, FieldSample, kl_divergence


def vae_loss(field: FieldSample, target_colors: torch.Tensor,
             target_occupancy: torch.Tensor, posterior: ColorPosterior,
             lambda_kl: float, lambda_color: float, lambda_udf: float):
    """Weighted total and per-component values.

    Color MSE covers on-surface and near-surface queries alike (their targets
    are the originating points' colors); occupancy MSE is against truncated
    UDF targets. Components are reported unweighted.
    """
    color = torch.mean((field.rgb - target_colors) ** 2)
    udf = torch.mean((field.occupancy - target_occupancy) ** 2)
    kl = kl_divergence(posterior)
    total = lambda_kl * kl + lambda_color * color + lambda_udf * udf
    components = {"kl": float(kl.detach()), "color": float(color.detach()),
                  "udf": float(udf.detach())}
    return total, components
