"""Art-style stage networks.

A toy style-modulated generator grows a learned 4x4 constant to the target
resolution; a coefficient-driven motion generator emits a flow field that
warps the generator's mid-level feature map (the layer at resolution/4,
standing in for the 64x64 layer of a full-size generator); a content encoder
skip-connects multi-scale identity features; a refinement network cleans up
warp/skip misalignment. Style codes from the inversion encoder are merged
with the art code through a zero-initialized residual block so the frozen
generator's behavior is untouched at init.

Feature maps are (C, H, W) tensors (batched variants prepend B); flow fields
are (H, W, 2) in pixel units (dx, dy).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError, ShapeError

ADAIN_EPS = 1e-5


@dataclass
class AdaINParams:
    """Per-channel scale and bias produced by a style or coefficient encoder."""

    scale: torch.Tensor
    bias: torch.Tensor

    def __post_init__(self):
        self.scale = torch.as_tensor(self.scale)
        self.bias = torch.as_tensor(self.bias)
        if self.scale.shape != self.bias.shape:
            raise ShapeError(
                f"scale shape {tuple(self.scale.shape)} != bias shape {tuple(self.bias.shape)}"
            )


def adain(x: torch.Tensor, params, eps: float = ADAIN_EPS) -> torch.Tensor:
    """Normalize each channel over its spatial extent (population std, eps in
    the denominator), then apply the given scale and bias.

    x is (..., C, H, W); scale/bias are (C,) or (..., C).
    """
    if isinstance(params, AdaINParams):
        scale, bias = params.scale, params.bias
    else:
        scale, bias = params
    scale = torch.as_tensor(scale, dtype=x.dtype)
    bias = torch.as_tensor(bias, dtype=x.dtype)
    if x.ndim < 3:
        raise ShapeError(f"feature map must be at least (C, H, W), got {tuple(x.shape)}")
    c = x.shape[-3]
    if scale.shape[-1] != c or bias.shape[-1] != c:
        raise ShapeError(f"style has {scale.shape[-1]} channels, feature map has {c}")
    mean = x.mean(dim=(-2, -1), keepdim=True)
    var = ((x - mean) ** 2).mean(dim=(-2, -1), keepdim=True)
    normalized = (x - mean) / torch.sqrt(var + eps)
    s = scale.reshape(*scale.shape, 1, 1)
    b = bias.reshape(*bias.shape, 1, 1)
    return s * normalized + b


def warp(m: torch.Tensor, f: torch.Tensor) -> torch.Tensor:
    """Bilinear warp of a feature map by a per-pixel displacement field.

    Samples m at (x + dx, y + dy) with border clamping; linear in m and
    differentiable in f. m is (C, H, W) or (B, C, H, W); f is (H, W, 2) or
    (B, H, W, 2).
    """
    squeeze = m.ndim == 3
    if squeeze:
        if f.ndim != 3:
            raise ShapeError(f"flow must be (H, W, 2) for an unbatched map, got {tuple(f.shape)}")
        m = m.unsqueeze(0)
        f = f.unsqueeze(0)
    if m.ndim != 4 or f.ndim != 4 or f.shape[-1] != 2:
        raise ShapeError(f"expected (B, C, H, W) and (B, H, W, 2), got {tuple(m.shape)}, {tuple(f.shape)}")
    b, c, h, w = m.shape
    if f.shape[:3] != (b, h, w):
        raise ShapeError(f"flow spatial shape {tuple(f.shape)} does not match map {tuple(m.shape)}")

    ys = torch.arange(h, dtype=m.dtype).view(1, h, 1)
    xs = torch.arange(w, dtype=m.dtype).view(1, 1, w)
    src_x = torch.clamp(xs + f[..., 0], 0.0, w - 1.0)
    src_y = torch.clamp(ys + f[..., 1], 0.0, h - 1.0)

    x0 = torch.clamp(src_x.floor(), 0.0, w - 1.0)
    y0 = torch.clamp(src_y.floor(), 0.0, h - 1.0)
    fx = src_x - x0
    fy = src_y - y0
    x0l = x0.long()
    y0l = y0.long()
    x1l = torch.clamp(x0l + 1, max=w - 1)
    y1l = torch.clamp(y0l + 1, max=h - 1)

    bi = torch.arange(b).view(b, 1, 1, 1)
    ci = torch.arange(c).view(1, c, 1, 1)

    def gather(yi, xi):
        return m[bi, ci, yi.unsqueeze(1), xi.unsqueeze(1)]

    fx = fx.unsqueeze(1)
    fy = fy.unsqueeze(1)
    out = (
        (1.0 - fy) * (1.0 - fx) * gather(y0l, x0l)
        + (1.0 - fy) * fx * gather(y0l, x1l)
        + fy * (1.0 - fx) * gather(y1l, x0l)
        + fy * fx * gather(y1l, x1l)
    )
    return out.squeeze(0) if squeeze else out


@dataclass
class GeneratorConfig:
    resolution: int = 32
    d_w: int = 64
    max_channels: int = 64
    channel_base: int = 16
    warp_resolution: int | None = None  # default resolution // 4
    use_skips: bool = True
    use_refiner: bool = True

    def __post_init__(self):
        if self.resolution < 8 or self.resolution & (self.resolution - 1):
            raise ConfigError(f"resolution must be a power of two >= 8, got {self.resolution}")
        if self.warp_resolution is None:
            self.warp_resolution = max(self.resolution // 4, 4)
        if self.warp_resolution not in self.block_resolutions:
            raise ConfigError(
                f"warp_resolution {self.warp_resolution} not among block resolutions {self.block_resolutions}"
            )

    @property
    def block_resolutions(self) -> list:
        return [2 ** k for k in range(2, int(math.log2(self.resolution)) + 1)]

    @property
    def num_style_layers(self) -> int:
        return 2 * len(self.block_resolutions)

    @property
    def skip_resolutions(self) -> list:
        return [r for r in self.block_resolutions if r >= self.warp_resolution]

    def channels_at(self, resolution: int) -> int:
        return min(self.max_channels, self.channel_base * self.resolution // resolution)

    def to_dict(self):
        return {
            "resolution": self.resolution,
            "d_w": self.d_w,
            "max_channels": self.max_channels,
            "channel_base": self.channel_base,
            "warp_resolution": self.warp_resolution,
            "use_skips": self.use_skips,
            "use_refiner": self.use_refiner,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class _StyleLayer(nn.Module):
    """One style-modulated conv: conv, AdaIN driven by a style-code layer, act."""

    def __init__(self, in_ch, out_ch, d_w):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.style = nn.Linear(d_w, 2 * out_ch)
        nn.init.zeros_(self.style.weight)
        with torch.no_grad():
            self.style.bias[:out_ch] = 1.0
            self.style.bias[out_ch:] = 0.0

    def forward(self, x, w_layer):
        x = self.conv(x)
        style = self.style(w_layer)
        scale, bias = style.chunk(2, dim=-1)
        return F.leaky_relu(adain(x, (scale, bias)), 0.2)


class StyleGenerator(nn.Module):
    """Grows a learned 4x4 constant through style-modulated blocks.

    Accepts an optional flow to warp the feature map at the configured warp
    resolution, an optional refiner applied right after the warp, and optional
    multi-scale content features injected additively at or above the warp
    layer (the texture path).
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        c0 = config.channels_at(4)
        self.const = nn.Parameter(torch.randn(c0, 4, 4))
        layers = []
        in_ch = c0
        for res in config.block_resolutions:
            out_ch = config.channels_at(res)
            layers.append(_StyleLayer(in_ch, out_ch, config.d_w))
            layers.append(_StyleLayer(out_ch, out_ch, config.d_w))
            in_ch = out_ch
        self.layers = nn.ModuleList(layers)
        self.to_rgb = nn.Conv2d(in_ch, 3, 1)

    def forward(self, w, content_feats=None, flow=None, refiner=None, use_skips=True):
        """w: (L, d_w) or (B, L, d_w). Returns pixels in [0,1], (B, 3, H, W)
        or (3, H, W) matching the batching of w."""
        cfg = self.config
        squeeze = w.ndim == 2
        if squeeze:
            w = w.unsqueeze(0)
        if w.shape[1] != cfg.num_style_layers or w.shape[2] != cfg.d_w:
            raise ShapeError(
                f"style code must be (B, {cfg.num_style_layers}, {cfg.d_w}), got {tuple(w.shape)}"
            )
        skips = {}
        if content_feats is not None:
            for feat in content_feats:
                feat_b = feat if feat.ndim == 4 else feat.unsqueeze(0)
                skips[feat_b.shape[-1]] = feat_b
        x = self.const.unsqueeze(0).expand(w.shape[0], -1, -1, -1)
        layer_idx = 0
        for res in cfg.block_resolutions:
            if res > 4:
                x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = self.layers[layer_idx](x, w[:, layer_idx])
            x = self.layers[layer_idx + 1](x, w[:, layer_idx + 1])
            layer_idx += 2
            if res == cfg.warp_resolution:
                if flow is not None:
                    flow_b = flow if flow.ndim == 4 else flow.unsqueeze(0)
                    x = warp(x, flow_b.to(x.dtype))
                if refiner is not None:
                    context = skips.get(res)
                    if context is None:
                        context = torch.zeros(
                            x.shape[0], refiner.context_channels, res, res, dtype=x.dtype
                        )
                    x = refiner(x, context)
            if use_skips and res in skips and res in cfg.skip_resolutions:
                x = x + skips[res].to(x.dtype)
        out = torch.sigmoid(self.to_rgb(x))
        return out.squeeze(0) if squeeze else out


class InversionEncoder(nn.Module):
    """Maps an image to a per-layer style code (the toy GAN-inversion stand-in)."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        res = config.resolution
        chans = [3, 32, 64, 64]
        convs = []
        cur = res
        idx = 0
        while cur > 4:
            convs.append(nn.Conv2d(chans[min(idx, 3)], chans[min(idx + 1, 3)], 3, stride=2, padding=1))
            cur //= 2
            idx += 1
        self.convs = nn.ModuleList(convs)
        self._flat = chans[min(idx, 3)] * 4 * 4
        self.head = nn.Linear(self._flat, config.num_style_layers * config.d_w)

    def forward(self, pixels):
        squeeze = pixels.ndim == 3
        if squeeze:
            pixels = pixels.unsqueeze(0)
        if pixels.shape[-1] != self.config.resolution:
            raise ShapeError(
                f"expected {self.config.resolution}px input, got {tuple(pixels.shape)}"
            )
        x = pixels
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        w = self.head(x.flatten(1)).view(-1, self.config.num_style_layers, self.config.d_w)
        return w.squeeze(0) if squeeze else w


class ModResBlock(nn.Module):
    """Residual merge of an art style code into an identity style code.

    A shared two-layer MLP over [w_i, w_s] per style layer, zero-initialized,
    so the merge is exactly the identity at init.
    """

    def __init__(self, d_w: int, hidden: int = 64):
        super().__init__()
        self.fc1 = nn.Linear(2 * d_w, hidden)
        self.fc2 = nn.Linear(hidden, d_w)
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)

    def forward(self, w_i, w_s):
        h = F.leaky_relu(self.fc1(torch.cat([w_i, w_s], dim=-1)), 0.2)
        return self.fc2(h)


def modres_merge(w_i: torch.Tensor, w_s: torch.Tensor, blend: float, block: ModResBlock) -> torch.Tensor:
    """w_i plus blend times the learned residual conditioned on w_s."""
    if w_i.shape != w_s.shape:
        raise ShapeError(f"style codes differ in shape: {tuple(w_i.shape)} vs {tuple(w_s.shape)}")
    if not 0.0 <= blend <= 1.0:
        raise ConfigError(f"blend must lie in [0,1], got {blend}")
    return w_i + blend * block(w_i, w_s)


class ContentEncoder(nn.Module):
    """Multi-scale content features matched to the generator's skip layers.

    Returns maps ordered from the full resolution down to the warp layer,
    halving per level, with channel counts matching the generator.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        self.resolutions = sorted(config.skip_resolutions, reverse=True)
        convs = [nn.Conv2d(3, config.channels_at(self.resolutions[0]), 3, padding=1)]
        for prev, res in zip(self.resolutions, self.resolutions[1:]):
            convs.append(
                nn.Conv2d(config.channels_at(prev), config.channels_at(res), 3, stride=2, padding=1)
            )
        self.convs = nn.ModuleList(convs)

    def forward(self, pixels):
        squeeze = pixels.ndim == 3
        if squeeze:
            pixels = pixels.unsqueeze(0)
        if pixels.shape[-1] != self.config.resolution:
            raise ShapeError(f"expected {self.config.resolution}px input, got {tuple(pixels.shape)}")
        feats = []
        x = pixels
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x.squeeze(0) if squeeze else x)
        return feats


class RefinementNetwork(nn.Module):
    """Residual corrector for the warped feature map; zero-init, so it is the
    identity on m_hat at initialization."""

    def __init__(self, channels: int, context_channels: int, hidden: int = 64):
        super().__init__()
        self.context_channels = context_channels
        self.conv1 = nn.Conv2d(channels + context_channels, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, channels, 3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, m_hat, context):
        squeeze = m_hat.ndim == 3
        if squeeze:
            m_hat = m_hat.unsqueeze(0)
            context = context.unsqueeze(0)
        if context.shape[-2:] != m_hat.shape[-2:]:
            raise ShapeError(
                f"context spatial shape {tuple(context.shape)} != map {tuple(m_hat.shape)}"
            )
        h = F.leaky_relu(self.conv1(torch.cat([m_hat, context], dim=1)), 0.2)
        out = m_hat + self.conv2(h)
        return out.squeeze(0) if squeeze else out


def refine(m_hat: torch.Tensor, context: torch.Tensor, refiner: RefinementNetwork) -> torch.Tensor:
    return refiner(m_hat, context)


class MotionGenerator(nn.Module):
    """Image encoder + coefficient-conditioned AdaIN + flow decoder.

    The image encoder pyramids the identity down to the warp resolution; every
    level is re-normalized with AdaIN parameters regressed from the
    coefficient row; the flow decoder turns the deepest map into a (H, W, 2)
    displacement field. The final flow conv is zero-initialized, so a fresh
    network emits exactly zero flow.
    """

    def __init__(self, config: GeneratorConfig, d_exp: int, hidden: int = 128):
        super().__init__()
        self.config = config
        self.d_exp = d_exp
        levels = []
        res = config.resolution
        ch_in, ch = 3, 32
        self.level_channels = []
        while True:
            levels.append(nn.Conv2d(ch_in, ch, 3, stride=1 if res == config.resolution else 2, padding=1))
            self.level_channels.append(ch)
            if res == config.warp_resolution:
                break
            ch_in, ch = ch, min(ch * 2, 64)
            res //= 2
        self.levels = nn.ModuleList(levels)
        self.coeff_net = nn.Sequential(nn.Linear(d_exp, hidden), nn.SiLU(), nn.Linear(hidden, hidden))
        self.style_heads = nn.ModuleList(nn.Linear(hidden, 2 * c) for c in self.level_channels)
        for head, c in zip(self.style_heads, self.level_channels):
            nn.init.zeros_(head.weight)
            with torch.no_grad():
                head.bias[:c] = 1.0
                head.bias[c:] = 0.0
        last = self.level_channels[-1]
        self.flow_conv1 = nn.Conv2d(last, 64, 3, padding=1)
        self.flow_out = nn.Conv2d(64, 2, 3, padding=1)
        nn.init.zeros_(self.flow_out.weight)
        nn.init.zeros_(self.flow_out.bias)

    def forward(self, identity, coeffs):
        """identity: (3, R, R) or (B, 3, R, R) pixels (or a Frame); coeffs:
        (D,) or (B, D). Returns (H_w, W_w, 2) or (B, H_w, W_w, 2)."""
        pixels = getattr(identity, "pixels", identity)
        pixels = torch.as_tensor(np.asarray(pixels) if not torch.is_tensor(pixels) else pixels, dtype=torch.float32)
        coeffs = torch.as_tensor(np.asarray(coeffs) if not torch.is_tensor(coeffs) else coeffs, dtype=pixels.dtype)
        squeeze = pixels.ndim == 3
        if squeeze:
            pixels = pixels.unsqueeze(0)
        if coeffs.ndim == 1:
            coeffs = coeffs.unsqueeze(0).expand(pixels.shape[0], -1)
        if pixels.shape[-1] != self.config.resolution:
            raise ShapeError(f"expected {self.config.resolution}px identity, got {tuple(pixels.shape)}")
        if coeffs.shape[-1] != self.d_exp:
            raise ShapeError(f"expected {self.d_exp}-dim coefficients, got {tuple(coeffs.shape)}")
        h = self.coeff_net(coeffs)
        x = pixels
        for level, head in zip(self.levels, self.style_heads):
            x = level(x)
            scale, bias = head(h).chunk(2, dim=-1)
            x = F.leaky_relu(adain(x, (scale, bias)), 0.2)
        x = F.leaky_relu(self.flow_conv1(x), 0.2)
        flow = self.flow_out(x).permute(0, 2, 3, 1)
        return flow.squeeze(0) if squeeze else flow


def synthesize(
    generator: StyleGenerator,
    w_merged: torch.Tensor,
    content_feats=None,
    flow=None,
    refiner: RefinementNetwork | None = None,
    use_skips: bool = True,
) -> torch.Tensor:
    """One stylized frame (3, H, W) in [0,1] from a merged style code."""
    return generator(w_merged, content_feats=content_feats, flow=flow, refiner=refiner, use_skips=use_skips)
