"""Rectified-flow path, classifier-free guidance, and the Euler sampler.

Convention: x0 is data, x1 is standard normal noise, the path is the straight
line x_t = (1-t) x0 + t x1 and the target velocity u = x1 - x0 is constant in
t. Sampling integrates from t=1 down to t=0 with x <- x - (1/steps) * v, which
makes one exact-velocity Euler step recover x0 identically.
"""

from __future__ import annotations

from typing import Optional

import torch

from ..errors import ParameterError
from ..vae.model import ColorLatentSet
from .model import ColorDiT, ConditionBundle


def flow_path(x0: torch.Tensor, x1: torch.Tensor, t: torch.Tensor):
    """Interpolant and its constant velocity target; t broadcasts per item."""
    while t.dim() < x0.dim():
        t = t[..., None]
    x_t = (1.0 - t) * x0 + t * x1
    return x_t, x1 - x0


def cfg_velocity(v_cond: torch.Tensor, v_uncond: torch.Tensor,
                 guidance: float) -> torch.Tensor:
    """v_uncond + g (v_cond - v_uncond); g=1 and g=0 return the inputs bit-wise."""
    if guidance == 1.0:
        return v_cond
    if guidance == 0.0:
        return v_uncond
    return v_uncond + guidance * (v_cond - v_uncond)


def sample(model: ColorDiT, bundle: ConditionBundle, steps: int, guidance: float,
           generator: Optional[torch.Generator] = None,
           x_init: Optional[torch.Tensor] = None) -> ColorLatentSet:
    """Euler-integrate the guided velocity field from noise to data latents.

    Uniform time grid t_k = 1 - k/steps; the unconditional pass drops image
    and color-control conditions (geometry is always kept). Deterministic per
    (checkpoint, bundle, steps, guidance, seed).
    """
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    geo = bundle.geo
    b, l = geo.tokens.shape[:2]
    dtype = geo.tokens.dtype
    if x_init is not None:
        x = x_init.clone()
    else:
        x = torch.randn((b, l, model.cfg.d_color), generator=generator, dtype=dtype)
    uncond = bundle.dropped()
    dt = 1.0 / steps
    with torch.no_grad():
        for k in range(steps):
            t = torch.full((b,), 1.0 - k * dt, dtype=dtype)
            v_cond = model(x, t, bundle)
            v_uncond = model(x, t, uncond)
            x = x - dt * cfg_velocity(v_cond, v_uncond, guidance)
    return ColorLatentSet(tokens=x, anchor_positions=geo.anchor_positions)
