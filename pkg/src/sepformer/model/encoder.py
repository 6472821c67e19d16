"""Hybrid encoder: attention on the coarsest map, then cross-scale fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..numerics import Tensor
from .backbone import conv_norm, group_norm


@dataclass
class EncoderMemory:
    """Flattened multi-scale memory of one image."""

    sequence: Tensor  # S×C
    level_shapes: list[tuple[int, int]]
    level_offsets: list[int]

    @property
    def size(self) -> int:
        return self.sequence.shape[0]


def sincos_2d(h: int, w: int, dim: int, temperature: float = 10000.0,
              dtype: torch.dtype | None = None) -> Tensor:
    """Fixed 2-D sine-cosine position embedding, ``(h*w)×dim``."""
    dtype = dtype or torch.get_default_dtype()
    gy, gx = torch.meshgrid(torch.arange(h, dtype=dtype), torch.arange(w, dtype=dtype), indexing="ij")
    quarter = dim // 4
    omega = 1.0 / temperature ** (torch.arange(quarter, dtype=dtype) / quarter)
    ox = gx.reshape(-1, 1) * omega[None]
    oy = gy.reshape(-1, 1) * omega[None]
    return torch.cat([ox.sin(), ox.cos(), oy.sin(), oy.cos()], dim=1)


class EncoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.ReLU(inplace=True), nn.Linear(ffn_dim, dim))
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x: Tensor, pos: Tensor) -> Tensor:
        q = x + pos
        x = self.norm1(x + self.attn(q, q, x, need_weights=False)[0])
        return self.norm2(x + self.ffn(x))


class FusionBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.reduce = conv_norm(2 * dim, dim, 1)
        self.refine = nn.Sequential(conv_norm(dim, dim, 3), conv_norm(dim, dim, 3, act=False))
        self.act = nn.ReLU(inplace=True)

    def forward(self, x: Tensor) -> Tensor:
        x = self.reduce(x)
        return self.act(x + self.refine(x))


class HybridEncoder(nn.Module):
    def __init__(self, in_widths: tuple[int, int, int], dim: int, heads: int,
                 ffn_dim: int, layers: int):
        super().__init__()
        self.dim = dim
        self.input_proj = nn.ModuleList(
            nn.Sequential(nn.Conv2d(w, dim, 1, bias=False), group_norm(dim)) for w in in_widths)
        self.layers = nn.ModuleList(EncoderLayer(dim, heads, ffn_dim) for _ in range(layers))
        self.lateral = nn.ModuleList(conv_norm(dim, dim, 1) for _ in range(2))
        self.top_down = nn.ModuleList(FusionBlock(dim) for _ in range(2))
        self.downsample = nn.ModuleList(conv_norm(dim, dim, 3, 2) for _ in range(2))
        self.bottom_up = nn.ModuleList(FusionBlock(dim) for _ in range(2))

    def forward(self, feats: list[Tensor]) -> list[EncoderMemory]:
        p = [proj(f) for proj, f in zip(self.input_proj, feats)]
        b, c, h, w = p[2].shape
        pos = sincos_2d(h, w, c, dtype=p[2].dtype)[None]
        x = p[2].flatten(2).transpose(1, 2)
        for layer in self.layers:
            x = layer(x, pos)
        top = x.transpose(1, 2).reshape(b, c, h, w)

        # top-down: stride 32 -> 16 -> 8
        lat3 = self.lateral[0](top)
        mid = self.top_down[0](torch.cat([F.interpolate(lat3, scale_factor=2.0, mode="nearest"), p[1]], 1))
        lat2 = self.lateral[1](mid)
        out1 = self.top_down[1](torch.cat([F.interpolate(lat2, scale_factor=2.0, mode="nearest"), p[0]], 1))
        # bottom-up: stride 8 -> 16 -> 32
        out2 = self.bottom_up[0](torch.cat([self.downsample[0](out1), lat2], 1))
        out3 = self.bottom_up[1](torch.cat([self.downsample[1](out2), lat3], 1))

        levels = [out1, out2, out3]
        shapes = [tuple(t.shape[-2:]) for t in levels]
        offsets = [0]
        for hh, ww in shapes[:-1]:
            offsets.append(offsets[-1] + hh * ww)
        seq = torch.cat([t.flatten(2).transpose(1, 2) for t in levels], 1)
        return [EncoderMemory(seq[i], shapes, offsets) for i in range(b)]


def sine_embed(points: Tensor, dim: int, temperature: float = 10000.0) -> Tensor:
    """Embed normalized ``(..., 2)`` points into ``(..., dim)`` sine features (y half, x half)."""
    half = dim // 2
    idx = torch.arange(half, dtype=points.dtype, device=points.device)
    dim_t = temperature ** (2 * torch.div(idx, 2, rounding_mode="floor") / half)
    scaled = points[..., None] * (2 * math.pi) / dim_t  # ..., 2, half
    emb = torch.stack([scaled[..., 0::2].sin(), scaled[..., 1::2].cos()], dim=-1).flatten(-2)
    return torch.cat([emb[..., 1, :], emb[..., 0, :]], dim=-1)
