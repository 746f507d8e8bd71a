"""Timestep-conditioned U-Net that denoises packed RAW images under RGB guidance.

Layout for the default 6-level config on a (4, 128, 128) pack:

    level      0    1    2    3    4    5
    spatial  128   64   32   16    8    4
    channels  32   32   64   64  128  128   (base 32 x expansion (1,1,2,2,4,4))

The encoder runs plain residual blocks (two conv+SiLU+GroupNorm stages, a
timestep scale/shift after the second norm) and halves resolution with a
stride-2 convolution that also expands channels. Bottleneck and decoder use
guided residual blocks: both group norms are wrapped in a spatially adaptive
modulation predicted from bilinearly downsampled guidance features,

    out = norm(x) * (1 + gamma(down(F_rgb))) + beta(down(F_rgb)),

and the timestep enters additively after the first convolution. The head is a
3x3 convolution to 4 channels followed by tanh (unless disabled).

Parameter names follow the module hierarchy, e.g.
``encoder_levels.2.blocks.0.conv1.weight`` or
``decoder_levels.1.blocks.0.norm2.gamma_conv.bias``; the checkpoint container
stores exactly these names.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .guidance import GuidanceConfig, GuidanceEncoder, downsample_guidance


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_resblocks_per_level: int = 2
    base_features: int = 32
    feature_expansion: tuple = (1, 1, 2, 2, 4, 4)
    norm_groups: int = 8
    attention_levels: tuple = (4, 5)  # deepest two levels; 16x16 and 8x8 for a 256 RGB patch
    raw_channels: int = 4
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    guidance_hidden: int = 128  # width of the shared conv inside each modulated norm
    time_embed_dim: int | None = None  # defaults to 4 * base_features
    output_activation: str = "tanh"  # "tanh" | "none"
    conditioning: str = "guided_blocks"  # "guided_blocks" | "concat_rgb"
    prediction_target: str = "x0"  # "x0" | "noise"

    def __post_init__(self):
        if self.time_embed_dim is None:
            self.time_embed_dim = 4 * self.base_features
        if self.output_activation not in ("tanh", "none"):
            raise ConfigError(f"bad output_activation {self.output_activation!r}")
        if self.conditioning not in ("guided_blocks", "concat_rgb"):
            raise ConfigError(f"bad conditioning {self.conditioning!r}")
        if self.prediction_target not in ("x0", "noise"):
            raise ConfigError(f"bad prediction_target {self.prediction_target!r}")
        for lvl in self.attention_levels:
            if not 0 <= lvl < self.levels:
                raise ConfigError(f"attention level {lvl} outside ladder of {self.levels} levels")
        for mult in self.feature_expansion:
            if (self.base_features * mult) % self.norm_groups:
                raise ConfigError(
                    f"norm_groups={self.norm_groups} must divide level width "
                    f"{self.base_features * mult}"
                )

    @property
    def levels(self) -> int:
        return len(self.feature_expansion)

    @property
    def channels(self) -> tuple:
        return tuple(self.base_features * m for m in self.feature_expansion)

    def to_dict(self) -> dict:
        return {
            "n_resblocks_per_level": self.n_resblocks_per_level,
            "base_features": self.base_features,
            "feature_expansion": list(self.feature_expansion),
            "norm_groups": self.norm_groups,
            "attention_levels": list(self.attention_levels),
            "raw_channels": self.raw_channels,
            "guidance_resblocks": self.guidance.n_resblocks,
            "guidance_features": self.guidance.n_features,
            "guidance_hidden": self.guidance_hidden,
            "time_embed_dim": self.time_embed_dim,
            "output_activation": self.output_activation,
            "conditioning": self.conditioning,
            "prediction_target": self.prediction_target,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        guidance = GuidanceConfig(
            n_resblocks=d.pop("guidance_resblocks"), n_features=d.pop("guidance_features")
        )
        d["feature_expansion"] = tuple(d["feature_expansion"])
        d["attention_levels"] = tuple(d["attention_levels"])
        return cls(guidance=guidance, **d)


class TimestepEmbedding(nn.Module):
    """Sinusoidal encoding of the integer timestep refined by a two-layer MLP."""

    def __init__(self, base_dim: int, embed_dim: int):
        super().__init__()
        self.base_dim = base_dim
        self.mlp = nn.Sequential(
            nn.Linear(base_dim, embed_dim), nn.SiLU(), nn.Linear(embed_dim, embed_dim)
        )

    def sinusoid(self, t: torch.Tensor) -> torch.Tensor:
        half = self.base_dim // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / (half - 1)
        )
        args = t[:, None] * freqs[None, :]
        return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.sinusoid(t))


class AdaptiveGroupNorm(nn.Module):
    """Parameter-free group norm scaled and shifted per position from guidance.

    gamma and beta come from a shared conv + ReLU followed by one individual
    conv each; zeroing those convs reduces the module to plain group norm.
    """

    def __init__(self, channels: int, guidance_channels: int, hidden: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels, affine=False)
        self.shared_conv = nn.Conv2d(guidance_channels, hidden, 3, padding=1)
        self.gamma_conv = nn.Conv2d(hidden, channels, 3, padding=1)
        self.beta_conv = nn.Conv2d(hidden, channels, 3, padding=1)

    def forward(self, x: torch.Tensor, guidance: torch.Tensor) -> torch.Tensor:
        if self.gamma_conv.out_channels != x.shape[-3]:
            raise ConfigError(
                f"modulation width {self.gamma_conv.out_channels} != feature width {x.shape[-3]}"
            )
        g = downsample_guidance(guidance, x.shape[-2], x.shape[-1])
        shared = F.relu(self.shared_conv(g))
        return self.norm(x) * (1.0 + self.gamma_conv(shared)) + self.beta_conv(shared)


def guided_modulation(features: torch.Tensor, guidance: torch.Tensor,
                      block: AdaptiveGroupNorm) -> torch.Tensor:
    """Apply one adaptive normalization; functional alias for testing."""
    return block(features, guidance)


class ResBlock(nn.Module):
    """Unguided residual block; timestep scale/shift after the second norm."""

    def __init__(self, in_ch: int, out_ch: int, time_dim: int, groups: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.time_proj = nn.Linear(time_dim, 2 * out_ch)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, t_emb):
        h = self.norm1(F.silu(self.conv1(x)))
        h = self.norm2(F.silu(self.conv2(h)))
        scale, shift = self.time_proj(t_emb)[:, :, None, None].chunk(2, dim=1)
        h = h * (1.0 + scale) + shift
        return h + self.skip(x)


class GuidedResBlock(nn.Module):
    """Residual block whose two norms are modulated by RGB guidance.

    The timestep embedding is added onto the first convolution's output; the
    spatial modulation carries the conditioning.
    """

    def __init__(self, in_ch: int, out_ch: int, time_dim: int, groups: int,
                 guidance_channels: int, hidden: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm1 = AdaptiveGroupNorm(out_ch, guidance_channels, hidden, groups)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = AdaptiveGroupNorm(out_ch, guidance_channels, hidden, groups)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, guidance, t_emb):
        h = self.conv1(x) + self.time_proj(t_emb)[:, :, None, None]
        h = self.norm1(F.silu(h), guidance)
        h = self.norm2(F.silu(self.conv2(h)), guidance)
        return h + self.skip(x)


class PlainBlockAdapter(nn.Module):
    """Makes an unguided block accept (and ignore) guidance; used in concat mode."""

    def __init__(self, block: ResBlock):
        super().__init__()
        self.block = block

    def forward(self, x, guidance, t_emb):
        return self.block(x, t_emb)


class AttentionBlock(nn.Module):
    """Single-head self-attention over flattened spatial positions, pre-norm."""

    def __init__(self, channels: int, groups: int):
        super().__init__()
        self.channels = channels
        self.norm = nn.GroupNorm(groups, channels)
        self.q = nn.Conv2d(channels, channels, 1)
        self.k = nn.Conv2d(channels, channels, 1)
        self.v = nn.Conv2d(channels, channels, 1)
        self.proj_out = nn.Conv2d(channels, channels, 1)

    def attention_weights(self, x: torch.Tensor) -> torch.Tensor:
        """softmax(Q K^T / sqrt(C)) over positions, shape (B, HW, HW)."""
        b, c, h, w = x.shape
        hn = self.norm(x)
        q = self.q(hn).reshape(b, c, h * w).permute(0, 2, 1)
        k = self.k(hn).reshape(b, c, h * w)
        return torch.softmax(torch.bmm(q, k) / math.sqrt(c), dim=-1)

    def forward(self, x):
        b, c, h, w = x.shape
        weights = self.attention_weights(x)
        v = self.v(self.norm(x)).reshape(b, c, h * w).permute(0, 2, 1)
        attended = torch.bmm(weights, v).permute(0, 2, 1).reshape(b, c, h, w)
        return x + self.proj_out(attended)


class EncoderLevel(nn.Module):
    def __init__(self, ch: int, n_blocks: int, time_dim: int, groups: int, attention: bool):
        super().__init__()
        self.blocks = nn.ModuleList(
            [ResBlock(ch, ch, time_dim, groups) for _ in range(n_blocks)]
        )
        self.attns = nn.ModuleList(
            [AttentionBlock(ch, groups) if attention else nn.Identity() for _ in range(n_blocks)]
        )

    def forward(self, x, t_emb):
        for block, attn in zip(self.blocks, self.attns):
            x = block(x, t_emb)
            x = attn(x)
        return x


class DecoderLevel(nn.Module):
    def __init__(self, ch: int, n_blocks: int, time_dim: int, groups: int, attention: bool,
                 guidance_channels: int, hidden: int, guided: bool):
        super().__init__()

        def make_block(in_ch):
            if guided:
                return GuidedResBlock(in_ch, ch, time_dim, groups, guidance_channels, hidden)
            return PlainBlockAdapter(ResBlock(in_ch, ch, time_dim, groups))

        self.blocks = nn.ModuleList(
            [make_block(2 * ch if i == 0 else ch) for i in range(n_blocks)]
        )
        self.attns = nn.ModuleList(
            [AttentionBlock(ch, groups) if attention else nn.Identity() for _ in range(n_blocks)]
        )

    def forward(self, x, guidance, t_emb):
        for block, attn in zip(self.blocks, self.attns):
            x = block(x, guidance, t_emb)
            x = attn(x)
        return x


class Upsample(nn.Module):
    """Nearest-neighbor 2x followed by a 3x3 convolution."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class GuidedUNet(nn.Module):
    """Predicts the clean RAW pack (or the noise, under ablation) from a noisy pack."""

    def __init__(self, cfg: ModelConfig = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        ch = cfg.channels
        time_dim = cfg.time_embed_dim
        groups = cfg.norm_groups
        guided = cfg.conditioning == "guided_blocks"

        in_ch = cfg.raw_channels + (0 if guided else 3)
        self.stem = nn.Conv2d(in_ch, ch[0], 3, padding=1)
        self.time_embed = TimestepEmbedding(cfg.base_features, time_dim)
        if guided:
            self.guidance_net = GuidanceEncoder(cfg.guidance)

        self.encoder_levels = nn.ModuleList(
            [
                EncoderLevel(ch[i], cfg.n_resblocks_per_level, time_dim, groups,
                             i in cfg.attention_levels)
                for i in range(cfg.levels)
            ]
        )
        self.downsamples = nn.ModuleList(
            [nn.Conv2d(ch[i], ch[i + 1], 3, stride=2, padding=1) for i in range(cfg.levels - 1)]
        )

        def make_mid_block():
            if guided:
                return GuidedResBlock(ch[-1], ch[-1], time_dim, groups,
                                      cfg.guidance.n_features, cfg.guidance_hidden)
            return PlainBlockAdapter(ResBlock(ch[-1], ch[-1], time_dim, groups))

        self.mid_block1 = make_mid_block()
        self.mid_attn = AttentionBlock(ch[-1], groups)
        self.mid_block2 = make_mid_block()

        self.decoder_levels = nn.ModuleList(
            [
                DecoderLevel(ch[i], cfg.n_resblocks_per_level, time_dim, groups,
                             i in cfg.attention_levels, cfg.guidance.n_features,
                             cfg.guidance_hidden, guided)
                for i in range(cfg.levels)
            ]
        )
        self.upsamples = nn.ModuleList(
            [Upsample(ch[i + 1], ch[i]) for i in range(cfg.levels - 1)]
        )
        self.head = nn.Conv2d(ch[0], cfg.raw_channels, 3, padding=1)

    # -- stages --------------------------------------------------------------

    def embed_time(self, t, batch: int, device, dtype) -> torch.Tensor:
        if not torch.is_tensor(t):
            t = torch.full((batch,), float(t), device=device, dtype=dtype)
        return self.time_embed(t.to(device=device, dtype=dtype))

    def encoder_forward(self, x: torch.Tensor, t_emb: torch.Tensor):
        """Returns (deepest features, per-level skip list)."""
        depth_div = 1 << (self.cfg.levels - 1)
        if x.shape[-2] % depth_div or x.shape[-1] % depth_div:
            raise ConfigError(
                f"input spatial dims {tuple(x.shape[-2:])} must be divisible by {depth_div}"
            )
        h = self.stem(x)
        skips = []
        for i, level in enumerate(self.encoder_levels):
            h = level(h, t_emb)
            skips.append(h)
            if i < self.cfg.levels - 1:
                h = self.downsamples[i](h)
        return h, skips

    def bottleneck_forward(self, h, guidance, t_emb):
        h = self.mid_block1(h, guidance, t_emb)
        h = self.mid_attn(h)
        return self.mid_block2(h, guidance, t_emb)

    def decoder_forward(self, h, skips, guidance, t_emb):
        if len(skips) != self.cfg.levels:
            raise ConfigError(f"expected {self.cfg.levels} skips, got {len(skips)}")
        for i in range(self.cfg.levels - 1, -1, -1):
            if h.shape[-2:] != skips[i].shape[-2:]:
                raise ConfigError("skip/feature resolution mismatch in decoder")
            h = torch.cat([h, skips[i]], dim=1)
            h = self.decoder_levels[i](h, guidance, t_emb)
            if i > 0:
                h = self.upsamples[i - 1](h)
        h = self.head(h)
        if self.cfg.output_activation == "tanh":
            h = torch.tanh(h)
        return h

    def forward(self, raw_noisy: torch.Tensor, rgb_n: torch.Tensor, t) -> torch.Tensor:
        if rgb_n.shape[-2:] != (2 * raw_noisy.shape[-2], 2 * raw_noisy.shape[-1]):
            raise ConfigError(
                f"RGB dims {tuple(rgb_n.shape[-2:])} must be twice the pack dims "
                f"{tuple(raw_noisy.shape[-2:])}"
            )
        t_emb = self.embed_time(t, raw_noisy.shape[0], raw_noisy.device, raw_noisy.dtype)
        if self.cfg.conditioning == "guided_blocks":
            guidance = self.guidance_net(rgb_n)
            x = raw_noisy
        else:
            guidance = None
            rgb_small = F.interpolate(rgb_n, size=raw_noisy.shape[-2:], mode="bilinear",
                                      align_corners=False)
            x = torch.cat([raw_noisy, rgb_small], dim=1)
        h, skips = self.encoder_forward(x, t_emb)
        h = self.bottleneck_forward(h, guidance, t_emb)
        return self.decoder_forward(h, skips, guidance, t_emb)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def tiny_model_config(levels: int = 2, base: int = 8, **overrides) -> ModelConfig:
    """Small config used by tests and CI runs; defaults keep every path cheap."""
    expansion = tuple(min(2 ** i, 4) for i in range(levels))
    defaults = dict(
        n_resblocks_per_level=2,
        base_features=base,
        feature_expansion=expansion,
        norm_groups=min(8, base),
        attention_levels=(levels - 1,),
        guidance=GuidanceConfig(n_resblocks=2, n_features=16),
        guidance_hidden=32,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)
