"""Forward diffusion, training objective, and the deterministic few-step sampler.

Coefficient sequences are diffused with per-step factors alpha_t; the closed
form marginal is x_t = sqrt(abar_t) * x_0 + sqrt(1 - abar_t) * eps with
abar_t the cumulative product of alphas (abar at t=0 is 1 by convention).
The denoiser predicts the clean sequence directly, so sampling follows the
deterministic (eta=0) update rewritten for clean-signal prediction:

    eps_hat = (x_t - sqrt(abar_t) * x0_hat) / sqrt(1 - abar_t)
    x_t'    = sqrt(abar_t') * x0_hat + sqrt(1 - abar_t') * eps_hat

Denoiser protocol: a callable ``denoiser(noisy, cond, t)`` taking batched
tensors noisy (B, N, D), cond (B, N, C), t (B,) one-based long, returning a
(B, N, D) clean-sequence prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigError, ShapeError

LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 2e-2
COSINE_S = 0.008


@dataclass
class NoiseSchedule:
    """Per-step alpha factors and their cumulative products."""

    alphas: np.ndarray
    alpha_bars: np.ndarray = field(init=False)
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        if self.alphas.ndim != 1 or self.alphas.size < 1:
            raise ConfigError(f"alphas must be a non-empty 1-d array, got {self.alphas.shape}")
        if np.any(self.alphas <= 0.0) or np.any(self.alphas > 1.0):
            raise ConfigError("alphas must lie in (0, 1]")
        self.alpha_bars = np.cumprod(self.alphas)
        if np.any(self.alpha_bars <= 0.0):
            raise ConfigError("alpha_bars must stay strictly positive")

    @property
    def T(self) -> int:
        return int(self.alphas.size)

    def alpha_bar(self, t: int) -> float:
        """Cumulative product at one-based step t; t=0 is the pre-diffusion 1."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise IndexError(f"t={t} outside [0, {self.T}]")
        return float(self.alpha_bars[t - 1])

    def to_dict(self) -> dict:
        if self.descriptor:
            return dict(self.descriptor)
        return {"kind": "explicit", "alphas": self.alphas.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        if d.get("kind") == "explicit":
            return cls(alphas=np.asarray(d["alphas"]))
        return make_schedule(
            d["T"],
            kind=d.get("kind", "linear"),
            beta_start=d.get("beta_start", LINEAR_BETA_START),
            beta_end=d.get("beta_end", LINEAR_BETA_END),
        )


def make_schedule(
    T: int,
    kind: str = "linear",
    beta_start: float = LINEAR_BETA_START,
    beta_end: float = LINEAR_BETA_END,
) -> NoiseSchedule:
    """Build a schedule of T steps.

    linear: betas interpolate [beta_start, beta_end] (defaults 1e-4 to 2e-2).
    cosine: squared-cosine cumulative products with offset 0.008, betas
    clipped to 0.999.
    """
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T)
    elif kind == "cosine":
        steps = np.arange(T + 1, dtype=np.float64)
        f = np.cos((steps / T + COSINE_S) / (1.0 + COSINE_S) * math.pi / 2.0) ** 2
        abars = f / f[0]
        betas = np.clip(1.0 - abars[1:] / abars[:-1], 1e-8, 0.999)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    schedule = NoiseSchedule(alphas=1.0 - betas)
    schedule.descriptor = {"kind": kind, "T": T, "beta_start": beta_start, "beta_end": beta_end}
    return schedule


@dataclass
class DiffusionBatch:
    """A training batch: clean sequences, one-based steps, and fixed noise draws."""

    clean: torch.Tensor  # (B, N, D)
    t: torch.Tensor  # (B,) long in [1, T]
    noise: torch.Tensor  # (B, N, D)

    def __post_init__(self):
        if self.clean.ndim != 3:
            raise ShapeError(f"clean must be (B, N, D), got {tuple(self.clean.shape)}")
        if self.noise.shape != self.clean.shape:
            raise ShapeError(
                f"noise shape {tuple(self.noise.shape)} != clean shape {tuple(self.clean.shape)}"
            )
        if self.t.ndim != 1 or self.t.shape[0] != self.clean.shape[0]:
            raise ShapeError(f"t must be (B,), got {tuple(self.t.shape)}")


def q_sample(clean, t: int, schedule: NoiseSchedule, noise):
    """Closed-form forward marginal at one-based step t.

    Works on numpy arrays and torch tensors alike; pure function.
    """
    if clean.shape != noise.shape:
        raise ShapeError(f"clean shape {tuple(clean.shape)} != noise shape {tuple(noise.shape)}")
    if not 1 <= int(t) <= schedule.T:
        raise IndexError(f"t={t} outside [1, {schedule.T}]")
    abar = schedule.alpha_bar(int(t))
    return math.sqrt(abar) * clean + math.sqrt(1.0 - abar) * noise


def training_loss(denoiser, batch: DiffusionBatch, conditions: torch.Tensor, schedule: NoiseSchedule):
    """Mean squared error between clean sequences and the denoiser's predictions
    on forward-diffused inputs; differentiable w.r.t. denoiser parameters."""
    noisy = torch.stack(
        [q_sample(batch.clean[b], int(batch.t[b]), schedule, batch.noise[b]) for b in range(batch.clean.shape[0])]
    )
    pred = denoiser(noisy, conditions, batch.t)
    if pred.shape != batch.clean.shape:
        raise ShapeError(
            f"prediction shape {tuple(pred.shape)} != clean shape {tuple(batch.clean.shape)}"
        )
    return ((pred - batch.clean) ** 2).mean()


def ddim_timesteps(T: int, num_steps: int) -> list[int]:
    """Evenly spaced one-based subsequence of [1, T] that always contains T."""
    if not 1 <= num_steps <= T:
        raise ConfigError(f"num_steps must be in [1, T={T}], got {num_steps}")
    return [(i * T) // num_steps for i in range(1, num_steps + 1)]


def ddim_sample(
    denoiser,
    condition: torch.Tensor,
    schedule: NoiseSchedule,
    num_steps: int,
    seed: int,
    shape: tuple[int, int] | None = None,
) -> torch.Tensor:
    """Deterministic sampler: exactly num_steps denoiser evaluations.

    condition is the fused per-frame conditioning (N, C); shape defaults to
    (N, D) with D taken from the denoiser's output. Returns the final clean
    prediction (abar at t=0 is 1, so the last update is exactly x0_hat).
    """
    cond = torch.as_tensor(condition, dtype=torch.float32)
    if cond.ndim != 2:
        raise ShapeError(f"condition must be (N, C), got {tuple(cond.shape)}")
    if shape is None:
        if hasattr(denoiser, "config"):
            shape = (cond.shape[0], denoiser.config.d_exp)
        else:
            raise ConfigError("shape is required when the denoiser exposes no config")
    steps = ddim_timesteps(schedule.T, num_steps)
    gen = torch.Generator().manual_seed(int(seed))
    x = torch.randn(*shape, generator=gen)
    cond_b = cond.unsqueeze(0)
    with torch.no_grad():
        for k in range(len(steps) - 1, -1, -1):
            t = steps[k]
            t_prev = steps[k - 1] if k > 0 else 0
            x0 = denoiser(x.unsqueeze(0), cond_b, torch.tensor([t], dtype=torch.long)).squeeze(0)
            if x0.shape != x.shape:
                raise ShapeError(f"denoiser returned {tuple(x0.shape)}, expected {tuple(x.shape)}")
            abar_t = schedule.alpha_bar(t)
            one_minus = 1.0 - abar_t
            if one_minus <= 0.0:
                eps = torch.zeros_like(x)
            else:
                eps = (x - math.sqrt(abar_t) * x0) / math.sqrt(one_minus)
            abar_prev = schedule.alpha_bar(t_prev)
            x = math.sqrt(abar_prev) * x0 + math.sqrt(1.0 - abar_prev) * eps
    return x
