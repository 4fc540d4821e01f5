"""Flow-matching training step with the illumination-invariance term.

Per step: shared t and noise per item, one velocity pass with image A; when
the invariance term is active, a second pass with image B (same x_t, t,
noise) penalizes prediction differences so illumination variation cancels.
Condition drops for CFG happen independently per item before the forward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch

from ..vae.model import ColorLatentSet, GeoLatentSet
from .flow import flow_path
from .model import ColorDiT, ConditionBundle


@dataclass
class DiTBatch:
    x0: torch.Tensor                       # (B, L, d_color) target latents
    geo: GeoLatentSet
    image_a: torch.Tensor                  # (B, T, d_img)
    image_b: Optional[torch.Tensor] = None
    image_mask: Optional[torch.Tensor] = None   # (B, T) bool, True = real token
    color_control: Optional[ColorLatentSet] = None


def _apply_item_drops(model: ColorDiT, tokens: torch.Tensor, mask, drop: torch.Tensor):
    """Replace dropped items' image tokens with the learned null token.

    A dropped item keeps a single valid (null) token; attention over one null
    token matches the unconditional inference path exactly.
    """
    if not drop.any():
        return tokens, mask
    null = model.null_image_token.to(tokens.dtype).expand(
        tokens.shape[0], tokens.shape[1], -1)
    tokens = torch.where(drop[:, None, None], null, tokens)
    if mask is None:
        mask = torch.ones(tokens.shape[:2], dtype=torch.bool)
    else:
        mask = mask.clone()
    dropped_mask = torch.zeros_like(mask)
    dropped_mask[:, 0] = True
    mask = torch.where(drop[:, None], dropped_mask, mask)
    return tokens, mask


def train_step(model: ColorDiT, optimizer: torch.optim.Optimizer, batch: DiTBatch,
               *, gamma_illum: float, drop_prob: float, illum_enabled: bool,
               generator: torch.Generator) -> dict:
    """One optimizer update; returns the loss report.

    Non-finite losses abort the step (no parameter update) and are flagged in
    the report. total = base + gamma_illum * invariance when the invariance
    term is active, else the plain flow-matching MSE.
    """
    b = batch.x0.shape[0]
    dtype = batch.x0.dtype
    t = torch.rand((b,), generator=generator, dtype=dtype)
    noise = torch.randn(batch.x0.shape, generator=generator, dtype=dtype)
    x_t, u_target = flow_path(batch.x0, noise, t)

    drop_image = torch.rand((b,), generator=generator) < drop_prob
    drop_color = torch.rand((b,), generator=generator) < drop_prob

    color_control = batch.color_control
    if color_control is not None and drop_color.any():
        keep = (~drop_color)[:, None, None].to(color_control.tokens.dtype)
        color_control = ColorLatentSet(color_control.tokens * keep,
                                       color_control.anchor_positions)

    img_a, mask_a = _apply_item_drops(model, batch.image_a, batch.image_mask,
                                      drop_image)
    bundle_a = ConditionBundle(geo=batch.geo, image_tokens=img_a,
                               image_mask=mask_a, color_control=color_control)
    v_a = model(x_t, t, bundle_a)
    base = torch.mean((v_a - u_target) ** 2)

    invariance = torch.zeros((), dtype=dtype)
    use_illum = illum_enabled and gamma_illum > 0 and batch.image_b is not None
    if use_illum:
        img_b, mask_b = _apply_item_drops(model, batch.image_b, batch.image_mask,
                                          drop_image)
        bundle_b = ConditionBundle(geo=batch.geo, image_tokens=img_b,
                                   image_mask=mask_b, color_control=color_control)
        v_b = model(x_t, t, bundle_b)
        invariance = torch.mean((v_a - v_b) ** 2)

    total = base + gamma_illum * invariance if use_illum else base

    report = {"total": float(total.detach()), "base": float(base.detach()),
              "invariance": float(invariance.detach()),
              "illum_active": bool(use_illum), "aborted": False}
    if not torch.isfinite(total):
        report["aborted"] = True
        optimizer.zero_grad(set_to_none=True)
        return report

    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    return report


class PlateauDetector:
    """Flags convergence when a window's mean loss improves < threshold
    relative to the previous window."""

    def __init__(self, window: int = 200, threshold: float = 0.02):
        self.window = int(window)
        self.threshold = float(threshold)
        self._losses: list = []
        self._prev_mean: Optional[float] = None
        self.plateaued = False

    def update(self, loss: float) -> bool:
        if self.plateaued:
            return True
        self._losses.append(float(loss))
        if len(self._losses) >= self.window:
            mean = sum(self._losses) / len(self._losses)
            self._losses.clear()
            if self._prev_mean is not None:
                improvement = (self._prev_mean - mean) / max(abs(self._prev_mean), 1e-12)
                if improvement < self.threshold:
                    self.plateaued = True
            self._prev_mean = mean
        return self.plateaued

    def state(self) -> dict:
        return {"plateaued": self.plateaued, "prev_mean": self._prev_mean,
                "pending": list(self._losses)}

    def load_state(self, state: dict):
        self.plateaued = bool(state["plateaued"])
        self._prev_mean = state["prev_mean"]
        self._losses = list(state["pending"])
