"""MLP denoising network: (noisy sequence, condition, step) -> clean prediction.

Frames are treated as tokens of size D_exp. Every token gets the fused
per-frame condition and a sinusoidal step embedding concatenated to it; the
body is a stack of residual blocks, each a shared per-frame MLP followed by a
linear mix over the N frame positions. The output projection is
zero-initialized so the untrained prediction is identically zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ShapeError


@dataclass
class DenoiserConfig:
    hidden_width: int = 128
    num_blocks: int = 2
    time_embed_dim: int = 64
    sequence_length: int = 24
    d_exp: int = 64
    condition_dim: int = 64

    def __post_init__(self):
        for name in ("hidden_width", "num_blocks", "time_embed_dim", "sequence_length", "d_exp", "condition_dim"):
            if getattr(self, name) < (0 if name == "num_blocks" else 1):
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

    def to_dict(self):
        return {
            "hidden_width": self.hidden_width,
            "num_blocks": self.num_blocks,
            "time_embed_dim": self.time_embed_dim,
            "sequence_length": self.sequence_length,
            "d_exp": self.d_exp,
            "condition_dim": self.condition_dim,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def sinusoidal_time_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Classic sin/cos step embedding; t is (B,) one-based."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1))
    args = t.double()[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2 == 1:
        emb = torch.cat([emb, torch.zeros(emb.shape[0], 1, dtype=emb.dtype)], dim=-1)
    return emb


class ResidualMLPBlock(nn.Module):
    """Shared per-frame MLP plus a residual mix over frame positions."""

    def __init__(self, width: int, sequence_length: int):
        super().__init__()
        self.fc1 = nn.Linear(width, width)
        self.fc2 = nn.Linear(width, width)
        self.seq_mix = nn.Linear(sequence_length, sequence_length)

    def forward(self, h):
        h = h + self.fc2(torch.nn.functional.silu(self.fc1(h)))
        h = h + self.seq_mix(h.transpose(1, 2)).transpose(1, 2)
        return h


class MLPDenoiser(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        token_dim = config.d_exp + config.condition_dim + config.time_embed_dim
        self.input_proj = nn.Linear(token_dim, config.hidden_width)
        self.blocks = nn.ModuleList(
            ResidualMLPBlock(config.hidden_width, config.sequence_length)
            for _ in range(config.num_blocks)
        )
        self.output_proj = nn.Linear(config.hidden_width, config.d_exp)
        nn.init.zeros_(self.output_proj.weight)
        nn.init.zeros_(self.output_proj.bias)

    def forward(self, noisy: torch.Tensor, cond: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        """noisy (B, N, D), cond (B, N, C), t (B,) one-based -> (B, N, D)."""
        cfg = self.config
        if noisy.ndim != 3 or noisy.shape[1:] != (cfg.sequence_length, cfg.d_exp):
            raise ShapeError(
                f"noisy must be (B, {cfg.sequence_length}, {cfg.d_exp}), got {tuple(noisy.shape)}"
            )
        if cond.shape != (noisy.shape[0], cfg.sequence_length, cfg.condition_dim):
            raise ShapeError(
                f"condition must be (B, {cfg.sequence_length}, {cfg.condition_dim}), got {tuple(cond.shape)}"
            )
        dtype = self.output_proj.weight.dtype
        temb = sinusoidal_time_embedding(t, cfg.time_embed_dim).to(dtype)
        temb = temb[:, None, :].expand(-1, cfg.sequence_length, -1)
        h = torch.cat([noisy.to(dtype), cond.to(dtype), temb], dim=-1)
        h = self.input_proj(h)
        for block in self.blocks:
            h = block(h)
        return self.output_proj(h)

    def denoise(self, noisy, condition, t: int):
        """Single-sequence convenience wrapper; accepts numpy or tensors and a
        ConditionVector (anything with .fused())."""
        fused = condition.fused() if hasattr(condition, "fused") else condition
        noisy_t = torch.as_tensor(np.asarray(noisy), dtype=torch.float32)
        cond_t = torch.as_tensor(np.asarray(fused), dtype=torch.float32)
        with torch.no_grad():
            out = self.forward(
                noisy_t.unsqueeze(0), cond_t.unsqueeze(0), torch.tensor([int(t)], dtype=torch.long)
            )
        return out.squeeze(0)


def parameter_count(config: DenoiserConfig) -> int:
    """Exact trainable-parameter count for a given config."""
    token_dim = config.d_exp + config.condition_dim + config.time_embed_dim
    w, n = config.hidden_width, config.sequence_length
    in_proj = token_dim * w + w
    out_proj = w * config.d_exp + config.d_exp
    per_block = 2 * (w * w + w) + n * n + n
    return in_proj + out_proj + config.num_blocks * per_block
