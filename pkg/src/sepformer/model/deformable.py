"""Multi-scale deformable cross-attention around per-query reference points."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from ..numerics import Tensor, to_grid


class DeformableAttention(nn.Module):
    """Each query samples ``points`` locations per head, level and reference point.

    Sampling locations are ``reference + offset * scale`` where ``scale``
    is supplied by the caller (line extent in the coarse stage, feature-map
    cell size in the fine stage). Samples are mixed by weights softmaxed over
    levels, reference points and sampling points jointly, per head.
    """

    def __init__(self, dim: int, heads: int, levels: int, points: int, refs: int):
        super().__init__()
        self.dim, self.heads, self.levels, self.points, self.refs = dim, heads, levels, points, refs
        self.sampling_offsets = nn.Linear(dim, heads * levels * refs * points * 2)
        self.attention_weights = nn.Linear(dim, heads * levels * refs * points)
        self.value_proj = nn.Linear(dim, dim)
        self.output_proj = nn.Linear(dim, dim)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        nn.init.zeros_(self.sampling_offsets.weight)
        theta = torch.arange(self.heads, dtype=torch.float64) * (2 * math.pi / self.heads)
        grid = torch.stack([theta.cos(), theta.sin()], -1)
        grid = grid / grid.abs().max(-1, keepdim=True)[0]
        grid = grid.view(self.heads, 1, 1, 1, 2).repeat(1, self.levels, self.refs, self.points, 1)
        grid = grid * torch.arange(1, self.points + 1, dtype=torch.float64).view(1, 1, 1, -1, 1)
        with torch.no_grad():
            self.sampling_offsets.bias.copy_(grid.flatten())
        nn.init.zeros_(self.attention_weights.weight)
        nn.init.zeros_(self.attention_weights.bias)
        nn.init.xavier_uniform_(self.value_proj.weight)
        nn.init.zeros_(self.value_proj.bias)
        nn.init.xavier_uniform_(self.output_proj.weight)
        nn.init.zeros_(self.output_proj.bias)

    def project_values(self, memory: Tensor, level_shapes: list[tuple[int, int]]) -> list[Tensor]:
        """Per-level value maps, each ``heads × head_dim × h × w``."""
        value = self.value_proj(memory)
        head_dim = self.dim // self.heads
        out, start = [], 0
        for h, w in level_shapes:
            v = value[start:start + h * w]
            out.append(v.transpose(0, 1).reshape(self.heads, head_dim, h, w))
            start += h * w
        return out

    def forward(self, query: Tensor, refs: Tensor, scale: Tensor, memory: Tensor,
                level_shapes: list[tuple[int, int]]) -> Tensor:
        """``query`` K×C, ``refs`` K×R×2 normalized, ``scale`` broadcastable to
        ``K×heads×levels×R×points×2``; returns K×C."""
        k = query.shape[0]
        if refs.shape != (k, self.refs, 2):
            raise ValueError(f"expected references {(k, self.refs, 2)}, got {tuple(refs.shape)}")
        if len(level_shapes) != self.levels:
            raise ValueError("level count mismatch")
        values = self.project_values(memory, level_shapes)
        offsets = self.sampling_offsets(query).view(k, self.heads, self.levels, self.refs, self.points, 2)
        weights = self.attention_weights(query).view(k, self.heads, -1).softmax(-1)
        weights = weights.view(k, self.heads, self.levels, self.refs * self.points)
        loc = refs[:, None, None, :, None, :] + offsets * scale
        grid = to_grid(loc)
        head_dim = self.dim // self.heads
        out = query.new_zeros((self.heads, head_dim, k))
        for lvl, value in enumerate(values):
            g = grid[:, :, lvl].permute(1, 0, 2, 3, 4).reshape(self.heads, k, self.refs * self.points, 2)
            sampled = F.grid_sample(value, g, mode="bilinear", padding_mode="border", align_corners=False)
            w = weights[:, :, lvl].permute(1, 0, 2)[:, None]  # heads×1×K×(R·points)
            out = out + (sampled * w).sum(-1)
        return self.output_proj(out.reshape(self.dim, k).transpose(0, 1))
