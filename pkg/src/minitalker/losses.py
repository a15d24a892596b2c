"""Training objectives for both stages.

The art-stage objective combines a pixel reconstruction term with a weighted
perceptual term (default weight 0.1) computed on a frozen feature extractor.
Both terms are elementwise-normalized (root-mean-square for pixels, mean
absolute difference for features) so thresholds are resolution-independent.

The adversarial pair follows the classic value function
E[log D(real)] + E[log(1 - D(fake))]; the discriminator minimizes its
negation (sum form) and the generator uses the non-saturating -log D(fake).
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError, NumericError, ShapeError

PROB_EPS = 1e-6
DEFAULT_PERCEPTUAL_WEIGHT = 0.1


class FixedRandomBackbone(nn.Module):
    """Frozen random-weight conv pyramid: a hermetic perceptual-distance proxy
    standing in for a pretrained feature extractor."""

    def __init__(self, seed: int = 0, depth: int = 3, channels: int = 16):
        super().__init__()
        if depth < 1:
            raise ConfigError(f"depth must be >= 1, got {depth}")
        gen = torch.Generator().manual_seed(int(seed))
        convs = []
        in_ch = 3
        for _ in range(depth):
            conv = nn.Conv2d(in_ch, channels, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * 0.2)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.05)
            convs.append(conv)
            in_ch = channels
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, pixels: torch.Tensor) -> list:
        squeeze = pixels.ndim == 3
        if squeeze:
            pixels = pixels.unsqueeze(0)
        feats = []
        x = pixels
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x.squeeze(0) if squeeze else x)
        return feats


def fixed_random_backbone(seed: int, depth: int = 3) -> FixedRandomBackbone:
    return FixedRandomBackbone(seed=seed, depth=depth)


def perceptual_distance(backbone, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute feature difference, averaged over pyramid levels."""
    feats_a = backbone(a)
    feats_b = backbone(b)
    terms = [(fa - fb).abs().mean() for fa, fb in zip(feats_a, feats_b)]
    return torch.stack(terms).mean()


def reconstruction_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Root-mean-square pixel difference (zero iff identical; the sqrt makes it
    non-smooth exactly at zero)."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")
    mse = ((pred - target) ** 2).mean()
    if mse == 0:
        return mse
    return torch.sqrt(mse)


def style2_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    backbone,
    lam: float = DEFAULT_PERCEPTUAL_WEIGHT,
) -> torch.Tensor:
    """Reconstruction plus lam-weighted perceptual distance."""
    if lam < 0:
        raise ConfigError(f"perceptual weight must be >= 0, got {lam}")
    loss = reconstruction_loss(pred, target)
    if lam > 0:
        loss = loss + lam * perceptual_distance(backbone, pred, target)
    return loss


def _as_probs(values: torch.Tensor) -> torch.Tensor:
    if not torch.all((values > 0.0) & (values < 1.0)):
        raise NumericError("discriminator outputs must lie strictly inside (0, 1)")
    return values.clamp(PROB_EPS, 1.0 - PROB_EPS)


def adversarial_losses(disc, real: torch.Tensor, fake: torch.Tensor):
    """(discriminator loss, generator loss).

    The discriminator term detaches the fake internally, so backpropagating
    the first output never touches the generator; the second output keeps the
    generator's graph alive.
    """
    d_real = _as_probs(disc(real))
    d_fake_detached = _as_probs(disc(fake.detach()))
    disc_loss = -(torch.log(d_real).mean() + torch.log(1.0 - d_fake_detached).mean())
    d_fake = _as_probs(disc(fake))
    gen_loss = -torch.log(d_fake).mean()
    return disc_loss, gen_loss


class Discriminator(nn.Module):
    """Four strided conv blocks with a sigmoid head at toy resolution."""

    def __init__(self, resolution: int = 32, base_channels: int = 32):
        super().__init__()
        if resolution < 16 or resolution & (resolution - 1):
            raise ConfigError(f"resolution must be a power of two >= 16, got {resolution}")
        chans = [3, base_channels, base_channels * 2, base_channels * 2, base_channels * 2]
        self.convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1) for i in range(4)
        )
        final_res = resolution // 16
        self.head = nn.Linear(chans[4] * final_res * final_res, 1)

    def forward(self, pixels: torch.Tensor) -> torch.Tensor:
        squeeze = pixels.ndim == 3
        if squeeze:
            pixels = pixels.unsqueeze(0)
        x = pixels
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        prob = torch.sigmoid(self.head(x.flatten(1))).squeeze(-1)
        return prob.squeeze(0) if squeeze else prob
