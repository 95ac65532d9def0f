"""Shifted-window residual super-resolution network for frequency-component images.

Layout: 3x3 conv feature extractor, a stack of residual shifted-window
transformer groups (or plain conv residual blocks), a conv + pixel-shuffle
upsampler, and a 3x3 output head. The head output is added to a fixed
cubic interpolation of the low-res real/imag channels.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .baselines import interp_matrix
from .core import check_scale
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 32
    blocks: int = 2
    window: int = 4
    scale: int = 4
    attention_enabled: bool = True
    heads: int = 4
    mlp_ratio: float = 2.0
    layers_per_block: int = 2  # alternating regular / shifted windows
    rim: bool = True
    # "shared": one trunk maps (re, im, |z|) -> re and (im, re, |z|) -> im, since
    # z -> i*conj(z) swaps the parts of a valid row. "joint": (re, im, |z|) -> (re, im).
    rim_layout: str = "shared"
    skip: str = "anchored"  # "anchored" | "centered" | "none"
    zero_head: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        check_scale(self.scale)
        if self.channels < 1 or self.blocks < 0 or self.window < 1:
            raise ConfigError("channels >= 1, blocks >= 0, window >= 1 required")
        if self.attention_enabled and self.channels % self.heads:
            raise ConfigError("channels must be divisible by heads")
        if self.skip not in ("anchored", "centered", "none"):
            raise ConfigError(f"unknown skip mode {self.skip!r}")
        if self.rim_layout not in ("shared", "joint"):
            raise ConfigError(f"unknown rim_layout {self.rim_layout!r}")

    @property
    def in_channels(self) -> int:
        return 3 if self.rim else 1

    @property
    def out_channels(self) -> int:
        return 2 if self.rim and self.rim_layout == "joint" else 1

    @property
    def samples_per_row(self) -> int:
        """Network samples one complex row turns into."""
        return 3 - self.out_channels

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def window_partition(x: torch.Tensor, w: int) -> torch.Tensor:
    b, h, wd, c = x.shape
    x = x.view(b, h // w, w, wd // w, w, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, w * w, c)


def window_reverse(windows: torch.Tensor, w: int, h: int, wd: int) -> torch.Tensor:
    b = windows.shape[0] // ((h // w) * (wd // w))
    x = windows.view(b, h // w, wd // w, w, w, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, wd, -1)


def shift_mask(h: int, wd: int, w: int, shift: int) -> torch.Tensor:
    """Additive mask keeping attention inside the original (unrolled) regions."""
    img = torch.zeros(1, h, wd, 1)
    cnt = 0
    for hs in (slice(0, -w), slice(-w, -shift), slice(-shift, None)):
        for ws in (slice(0, -w), slice(-w, -shift), slice(-shift, None)):
            img[:, hs, ws, :] = cnt
            cnt += 1
    win = window_partition(img, w).squeeze(-1)
    diff = win.unsqueeze(1) - win.unsqueeze(2)
    return diff.ne(0).float() * -100.0


class WindowAttention(nn.Module):
    def __init__(self, dim: int, window: int, heads: int):
        super().__init__()
        self.window, self.heads = window, heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.bias_table = nn.Parameter(torch.zeros((2 * window - 1) ** 2, heads))
        nn.init.trunc_normal_(self.bias_table, std=0.02)
        coords = torch.stack(torch.meshgrid(torch.arange(window), torch.arange(window), indexing="ij")).flatten(1)
        rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0) + (window - 1)
        self.register_buffer("rel_index", rel[..., 0] * (2 * window - 1) + rel[..., 1], persistent=False)

    def forward(self, x, mask=None):
        bw, n, c = x.shape
        qkv = self.qkv(x).reshape(bw, n, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q * self.scale) @ k.transpose(-2, -1)
        bias = self.bias_table[self.rel_index.reshape(-1)].reshape(n, n, -1).permute(2, 0, 1)
        attn = attn + bias.unsqueeze(0)
        if mask is not None:
            nw = mask.shape[0]
            attn = attn.view(bw // nw, nw, self.heads, n, n) + mask.unsqueeze(1).unsqueeze(0)
            attn = attn.view(-1, self.heads, n, n)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(bw, n, c)
        return self.proj(out)


class SwinLayer(nn.Module):
    def __init__(self, dim: int, window: int, heads: int, shift: int, mlp_ratio: float):
        super().__init__()
        self.window, self.shift = window, shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, window, heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))
        self._masks: dict[tuple[int, int], torch.Tensor] = {}

    def _mask(self, h, w, like):
        if self.shift == 0:
            return None
        key = (h, w)
        if key not in self._masks:
            self._masks[key] = shift_mask(h, w, self.window, self.shift)
        return self._masks[key].to(like.dtype)

    def forward(self, x):  # (B, H, W, C)
        b, h, w, c = x.shape
        y = self.norm1(x)
        if self.shift:
            y = torch.roll(y, (-self.shift, -self.shift), dims=(1, 2))
        win = self.attn(window_partition(y, self.window), self._mask(h, w, x))
        y = window_reverse(win, self.window, h, w)
        if self.shift:
            y = torch.roll(y, (self.shift, self.shift), dims=(1, 2))
        x = x + y
        return x + self.mlp(self.norm2(x))


class ResidualSwinGroup(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.channels
        self.layers = nn.ModuleList(
            SwinLayer(c, cfg.window, cfg.heads, 0 if i % 2 == 0 else cfg.window // 2, cfg.mlp_ratio)
            for i in range(cfg.layers_per_block)
        )
        self.conv = nn.Conv2d(c, c, 3, padding=1)

    def forward(self, x):  # (B, C, H, W)
        y = x.permute(0, 2, 3, 1)
        for layer in self.layers:
            y = layer(y)
        return x + self.conv(y.permute(0, 3, 1, 2))


class ConvResidualBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.channels
        self.body = nn.Sequential(nn.Conv2d(c, c, 3, padding=1), nn.ReLU(), nn.Conv2d(c, c, 3, padding=1))

    def forward(self, x):
        return x + self.body(x)


class SRNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.conv_first = nn.Conv2d(cfg.in_channels, c, 3, padding=1)
        block = ResidualSwinGroup if cfg.attention_enabled else ConvResidualBlock
        self.body = nn.ModuleList(block(cfg) for _ in range(cfg.blocks))
        self.conv_after_body = nn.Conv2d(c, c, 3, padding=1)
        ups = []
        s = cfg.scale
        while s > 1:
            ups += [nn.Conv2d(c, 4 * c, 3, padding=1), nn.PixelShuffle(2)]
            s //= 2
        self.upsample = nn.Sequential(*ups)
        self.conv_last = nn.Conv2d(c, cfg.out_channels, 3, padding=1)
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02)
                nn.init.zeros_(m.bias)
        if cfg.zero_head:
            nn.init.zeros_(self.conv_last.weight)
            nn.init.zeros_(self.conv_last.bias)
        self._interp: dict[tuple, torch.Tensor] = {}

    def _skip(self, x):
        """Cubic interpolation of the first ``out_channels`` input channels."""
        cfg = self.cfg
        h, w = x.shape[-2:]
        key = (h, w, x.dtype)
        if key not in self._interp:
            anchored = cfg.skip == "anchored"
            self._interp[key] = (
                torch.tensor(interp_matrix(h, cfg.scale, anchored), dtype=x.dtype),
                torch.tensor(interp_matrix(w, cfg.scale, anchored), dtype=x.dtype),
            )
        wy, wx = self._interp[key]
        return wy @ x[:, : cfg.out_channels] @ wx.T

    def forward(self, x):
        cfg = self.cfg
        h, w = x.shape[-2:]
        if x.shape[1] != cfg.in_channels:
            raise ShapeError(f"expected {cfg.in_channels} input channels, got {x.shape[1]}")
        if cfg.attention_enabled and cfg.blocks and (h % cfg.window or w % cfg.window):
            raise ShapeError(f"window {cfg.window} does not divide input {h}x{w}")
        feat = self.conv_first(x)
        y = feat
        for blk in self.body:
            y = blk(y)
        y = self.conv_after_body(y) + feat
        out = self.conv_last(self.upsample(y))
        if cfg.skip != "none":
            out = out + self._skip(x)
        return out


def build_model(cfg: ModelConfig, dtype=torch.float32) -> SRNet:
    with torch.random.fork_rng():
        torch.manual_seed(cfg.rng_seed)
        model = SRNet(cfg)
    return model.to(dtype)


def to_input(channels: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Map normalized RIM stacks ``(B, 3, h, w)`` to network inputs.

    Single-channel mode treats real and imaginary planes as separate samples,
    giving ``(2B, 1, h, w)``. The shared RIM layout gives ``(2B, 3, h, w)`` with
    the parts swapped in every second sample.
    """
    if cfg.rim and cfg.rim_layout == "joint":
        return channels
    b = channels.shape[0]
    if cfg.rim:
        swapped = channels[:, [1, 0, 2]]
        return np.stack([channels, swapped], axis=1).reshape(2 * b, 3, *channels.shape[-2:])
    return channels[:, :2].reshape(2 * b, 1, *channels.shape[-2:])


def from_output(out: torch.Tensor, cfg: ModelConfig) -> torch.Tensor:
    """Network outputs back to ``(B, 2, H, W)`` real/imag planes."""
    if cfg.out_channels == 2:
        return out
    return out.reshape(-1, 2, *out.shape[-2:])


def forward(model: SRNet, channels: np.ndarray | torch.Tensor) -> torch.Tensor:
    """Normalized low-res RIM stacks ``(B, 3, h, w)`` -> high-res ``(B, 2, H, W)``."""
    cfg = model.cfg
    if isinstance(channels, torch.Tensor):
        channels = channels.detach().cpu().numpy()
    x = torch.as_tensor(to_input(np.asarray(channels), cfg), dtype=next(model.parameters()).dtype)
    return from_output(model(x), cfg)
