"""Shared differentiable building blocks for the VAE and the DiT.

Pre-norm residual transformer blocks with zero-initialized output
projections (fresh blocks are exact identities), multi-head self/cross
attention, 3-axis rotary position encoding driven by point coordinates,
sinusoidal timestep embedding, and adaptive-normalization DiT blocks.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import torch
import torch.nn as nn

from ..errors import ConfigError, ContractViolationError, NumericError

ROPE_BASE = 10000.0


@dataclass(frozen=True)
class AttentionBlockConfig:
    width: int
    heads: int
    mlp_ratio: int = 4
    eps: float = 1e-6

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")


class FrequencyEmbed(nn.Module):
    """Sinusoidal embedding of raw coordinates: (x, sin(2^k pi x), cos(2^k pi x))."""

    def __init__(self, octaves: int = 8, input_dim: int = 3):
        super().__init__()
        freqs = (2.0 ** torch.arange(octaves, dtype=torch.float64)) * math.pi
        self.register_buffer("freqs", freqs, persistent=False)
        self.out_dim = input_dim * (2 * octaves + 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        ang = x[..., None] * self.freqs.to(x.dtype)
        ang = ang.reshape(*x.shape[:-1], -1)
        return torch.cat([x, ang.sin(), ang.cos()], dim=-1)


def rope3d(q: torch.Tensor, k: torch.Tensor, positions: torch.Tensor):
    """Rotate (q, k) head tensors by per-axis rotary angles from 3D positions.

    q, k: (B, H, L, Dh) with Dh divisible by 6; positions: (B, L, 3) in [-1, 1],
    shifted to [0, 2] before the frequency ladder so angles stay positive and
    bounded. Attention logits then depend only on per-axis position deltas.
    """
    dh = q.shape[-1]
    if dh % 6 != 0:
        raise ConfigError(f"rope3d needs head dim divisible by 6, got {dh}")
    block = dh // 3
    pairs = block // 2
    inv_freq = ROPE_BASE ** (-torch.arange(pairs, dtype=q.dtype, device=q.device) / pairs)
    coords = (positions.to(q.dtype) + 1.0)                        # [0, 2]
    ang = coords[..., None] * inv_freq                            # (B, L, 3, pairs)
    ang = ang.permute(0, 2, 1, 3)                                 # (B, 3, L, pairs)
    cos = ang.cos()[:, None]                                      # (B, 1, 3, L, pairs)
    sin = ang.sin()[:, None]

    def rotate(x):
        b, h, l, _ = x.shape
        xb = x.view(b, h, l, 3, 2, pairs).permute(0, 1, 3, 4, 2, 5)  # (B,H,3,2,L,pairs)
        u, v = xb[:, :, :, 0], xb[:, :, :, 1]                        # (B,H,3,L,pairs)
        ru = u * cos - v * sin
        rv = u * sin + v * cos
        out = torch.stack([ru, rv], dim=3)                           # (B,H,3,2,L,pairs)
        return out.permute(0, 1, 4, 2, 3, 5).reshape(b, h, l, -1)

    return rotate(q), rotate(k)


def _attention(q, k, v, key_mask=None):
    """Plain softmax attention; key_mask True = attendable key."""
    scale = q.shape[-1] ** -0.5
    logits = (q @ k.transpose(-2, -1)) * scale
    if key_mask is not None:
        logits = logits.masked_fill(~key_mask[:, None, None, :], float("-inf"))
    return torch.softmax(logits, dim=-1) @ v


def _split_heads(x, heads):
    b, l, w = x.shape
    return x.view(b, l, heads, w // heads).transpose(1, 2)


def _merge_heads(x):
    b, h, l, d = x.shape
    return x.transpose(1, 2).reshape(b, l, h * d)


class MLP(nn.Module):
    def __init__(self, width: int, ratio: int = 4, zero_init: bool = True):
        super().__init__()
        self.c_fc = nn.Linear(width, width * ratio)
        self.c_proj = nn.Linear(width * ratio, width)
        self.act = nn.GELU()
        if zero_init:
            nn.init.zeros_(self.c_proj.weight)
            nn.init.zeros_(self.c_proj.bias)

    def forward(self, x):
        return self.c_proj(self.act(self.c_fc(x)))


class MultiheadSelfAttention(nn.Module):
    def __init__(self, cfg: AttentionBlockConfig, zero_init: bool = True):
        super().__init__()
        self.heads = cfg.heads
        self.c_qkv = nn.Linear(cfg.width, cfg.width * 3)
        self.c_proj = nn.Linear(cfg.width, cfg.width)
        if zero_init:
            nn.init.zeros_(self.c_proj.weight)
            nn.init.zeros_(self.c_proj.bias)

    def forward(self, x, positions=None, key_mask=None):
        q, k, v = self.c_qkv(x).chunk(3, dim=-1)
        q, k, v = (_split_heads(t, self.heads) for t in (q, k, v))
        if positions is not None:
            q, k = rope3d(q, k, positions)
        return self.c_proj(_merge_heads(_attention(q, k, v, key_mask)))


class MultiheadCrossAttention(nn.Module):
    def __init__(self, cfg: AttentionBlockConfig, data_width: int | None = None,
                 zero_init: bool = True):
        super().__init__()
        self.heads = cfg.heads
        self.c_q = nn.Linear(cfg.width, cfg.width)
        self.c_kv = nn.Linear(data_width or cfg.width, cfg.width * 2)
        self.c_proj = nn.Linear(cfg.width, cfg.width)
        if zero_init:
            nn.init.zeros_(self.c_proj.weight)
            nn.init.zeros_(self.c_proj.bias)

    def forward(self, x, data, key_mask=None):
        if data.shape[1] == 0:
            raise ContractViolationError("cross attention requires non-empty context")
        q = _split_heads(self.c_q(x), self.heads)
        k, v = self.c_kv(data).chunk(2, dim=-1)
        k, v = _split_heads(k, self.heads), _split_heads(v, self.heads)
        return self.c_proj(_merge_heads(_attention(q, k, v, key_mask)))


class SelfAttentionBlock(nn.Module):
    """x + Attn(LN(x)) then x + MLP(LN(x)); identity at init (zero-init projections)."""

    def __init__(self, cfg: AttentionBlockConfig):
        super().__init__()
        self.ln_1 = nn.LayerNorm(cfg.width, eps=cfg.eps)
        self.attn = MultiheadSelfAttention(cfg)
        self.ln_2 = nn.LayerNorm(cfg.width, eps=cfg.eps)
        self.mlp = MLP(cfg.width, cfg.mlp_ratio)

    def forward(self, x, positions=None, key_mask=None):
        if not torch.isfinite(x).all():
            raise NumericError("non-finite values in attention input")
        x = x + self.attn(self.ln_1(x), positions=positions, key_mask=key_mask)
        return x + self.mlp(self.ln_2(x))


class CrossAttentionBlock(nn.Module):
    """Queries attend to context; output length equals query length."""

    def __init__(self, cfg: AttentionBlockConfig, data_width: int | None = None):
        super().__init__()
        self.ln_q = nn.LayerNorm(cfg.width, eps=cfg.eps)
        self.ln_kv = nn.LayerNorm(data_width or cfg.width, eps=cfg.eps)
        self.attn = MultiheadCrossAttention(cfg, data_width=data_width)
        self.ln_2 = nn.LayerNorm(cfg.width, eps=cfg.eps)
        self.mlp = MLP(cfg.width, cfg.mlp_ratio)

    def forward(self, x, data, key_mask=None):
        x = x + self.attn(self.ln_q(x), self.ln_kv(data), key_mask=key_mask)
        return x + self.mlp(self.ln_2(x))


def sinusoidal_time_features(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Log-spaced sin/cos features of t in [0,1]; out-of-range t clamps with warning."""
    if torch.any((t < 0) | (t > 1)):
        warnings.warn("timestep outside [0,1] clamped", stacklevel=2)
        t = t.clamp(0.0, 1.0)
    half = dim // 2
    omega = torch.exp(torch.linspace(0.0, math.log(1000.0), half,
                                     dtype=t.dtype, device=t.device))
    ang = t[..., None] * omega
    return torch.cat([ang.sin(), ang.cos()], dim=-1)


class TimestepEmbed(nn.Module):
    """Sinusoidal features followed by a 2-layer MLP."""

    def __init__(self, width: int, feature_dim: int = 256):
        super().__init__()
        self.feature_dim = feature_dim
        self.net = nn.Sequential(nn.Linear(feature_dim, width), nn.SiLU(),
                                 nn.Linear(width, width))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.net(sinusoidal_time_features(t, self.feature_dim))


class AdaLNDiTBlock(nn.Module):
    """Self-attention (RoPE-3D) + image cross-attention + MLP, each modulated
    by timestep scale/shift/gate. Gates are zero-initialized so a fresh block
    is the identity."""

    def __init__(self, cfg: AttentionBlockConfig, context_width: int):
        super().__init__()
        w = cfg.width
        self.ln_self = nn.LayerNorm(w, eps=cfg.eps, elementwise_affine=False)
        self.attn = MultiheadSelfAttention(cfg, zero_init=False)
        self.ln_cross = nn.LayerNorm(w, eps=cfg.eps, elementwise_affine=False)
        self.cross = MultiheadCrossAttention(cfg, data_width=context_width,
                                             zero_init=False)
        self.ln_mlp = nn.LayerNorm(w, eps=cfg.eps, elementwise_affine=False)
        self.mlp = MLP(w, cfg.mlp_ratio, zero_init=False)
        self.modulation = nn.Sequential(nn.SiLU(), nn.Linear(w, 9 * w))
        nn.init.zeros_(self.modulation[1].weight)
        nn.init.zeros_(self.modulation[1].bias)

    def forward(self, x, t_vec, positions, context, context_mask=None):
        mods = self.modulation(t_vec)[:, None, :].chunk(9, dim=-1)
        s1, sc1, g1, s2, sc2, g2, s3, sc3, g3 = mods
        x = x + g1 * self.attn(self.ln_self(x) * (1 + sc1) + s1, positions=positions)
        x = x + g2 * self.cross(self.ln_cross(x) * (1 + sc2) + s2, context,
                                key_mask=context_mask)
        x = x + g3 * self.mlp(self.ln_mlp(x) * (1 + sc3) + s3)
        return x
