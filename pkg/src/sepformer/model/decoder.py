"""Per-axis separator decoder: query selection, coarse lines, fine strips."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import nn

from ..geometry import (Axis, canonicalize_tensor, level_centers, proposal_array,
                        sample_points_tensor, strip_chord)
from ..numerics import Tensor, inverse_sigmoid
from .config import DecoderStages, ModelConfig
from .deformable import DeformableAttention
from .encoder import EncoderMemory, sine_embed

ANCHOR_EPS = 1e-3
MIN_LINE_EXTENT = 1.0 / 32

# Picks the queries that enter the fine stage: receives final coarse score
# logits (K) and canonical lines (K×4), returns query indices.
FineSelector = Callable[[Tensor, Tensor], Tensor]


class MLP(nn.Module):
    def __init__(self, din: int, hidden: int, dout: int, layers: int):
        super().__init__()
        dims = [din] + [hidden] * (layers - 1) + [dout]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = torch.relu(x)
        return x

    def zero_output(self) -> None:
        nn.init.zeros_(self.layers[-1].weight)
        nn.init.zeros_(self.layers[-1].bias)


class DecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int, points: int, refs: int, levels: int = 3):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.cross_attn = DeformableAttention(dim, heads, levels, points, refs)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.ReLU(inplace=True), nn.Linear(ffn_dim, dim))
        self.norm3 = nn.LayerNorm(dim)

    def forward(self, tgt: Tensor, pos: Tensor, refs: Tensor, scale: Tensor,
                memory: EncoderMemory) -> Tensor:
        q = (tgt + pos)[None]
        tgt = self.norm1(tgt + self.self_attn(q, q, tgt[None], need_weights=False)[0][0])
        tgt = self.norm2(tgt + self.cross_attn(tgt + pos, refs, scale, memory.sequence,
                                               memory.level_shapes))
        return self.norm3(tgt + self.ffn(tgt))


@dataclass
class StageOutput:
    """One supervised prediction set.

    ``score_logits`` and ``lines`` cover all K queries (None in the fine
    stage); ``strips`` covers the queries listed in ``query_index`` (all K
    when ``query_index`` is None).
    """

    score_logits: Tensor | None = None
    lines: Tensor | None = None
    strips: Tensor | None = None
    query_index: Tensor | None = None
    raw_logits: Tensor | None = None
    deltas: Tensor | None = None


@dataclass
class AxisOutput:
    axis: Axis
    proposal_logits: Tensor  # S
    proposal_lines: Tensor  # S×4, canonical
    topk: Tensor  # K selected positions
    init_logits: Tensor  # K×4, inverse-sigmoid references entering the decoder
    coarse: list[StageOutput] = field(default_factory=list)
    fine: list[StageOutput] = field(default_factory=list)
    fine_index: Tensor | None = None

    @property
    def final(self) -> StageOutput:
        """Scores and lines from the last scoring layer, strips from the last layer."""
        last = self.coarse[-1]
        if not self.fine:
            return last
        f = self.fine[-1]
        return StageOutput(last.score_logits, last.lines, f.strips, f.query_index)


class AxisDecoder(nn.Module):
    def __init__(self, axis: Axis, cfg: ModelConfig):
        super().__init__()
        self.axis = Axis(axis)
        self.cfg = cfg
        c = cfg.channels
        self.k = cfg.k_row if self.axis == Axis.ROW else cfg.k_col
        self.enc_output = nn.Sequential(nn.Linear(c, c), nn.LayerNorm(c))
        self.enc_score_head = nn.Linear(c, 1)
        self.enc_line_head = MLP(c, c, 4, 3)
        self.enc_line_head.zero_output()
        self.stages = cfg.decoder_stages
        n_unified = self.stages.unified_layers
        if n_unified:
            n_coarse, n_fine = n_unified, 0
            coarse_refs = cfg.num_points
        else:
            n_coarse, n_fine = cfg.coarse_layers, cfg.fine_layers
            coarse_refs = 2
        self.coarse_layers = nn.ModuleList(
            DecoderLayer(c, cfg.heads, cfg.ffn_dim, cfg.deform_points, coarse_refs) for _ in range(n_coarse))
        self.class_heads = nn.ModuleList(nn.Linear(c, 1) for _ in range(n_coarse))
        if n_unified:
            self.coarse_heads = nn.ModuleList(MLP(c, c, 2 * cfg.num_points, 3) for _ in range(n_coarse))
        else:
            self.coarse_heads = nn.ModuleList(MLP(c, c, 4, 3) for _ in range(n_coarse))
        self.coarse_pos = MLP(c, c, c, 2)
        self.fine_layers = nn.ModuleList(
            DecoderLayer(c, cfg.heads, cfg.ffn_dim, cfg.deform_points, cfg.num_points) for _ in range(n_fine))
        self.fine_head = MLP(c, c, 2 * cfg.num_points, 3) if n_fine else None
        self.fine_pos = MLP(c, c, c, 2) if n_fine else None
        prior = -float(np.log((1 - 0.01) / 0.01))
        for head in [self.enc_score_head, *self.class_heads]:
            nn.init.constant_(head.bias, prior)
        for head in self.coarse_heads:
            head.zero_output()
        if self.fine_head is not None:
            self.fine_head.zero_output()
        self._anchor_cache: dict[tuple, Tensor] = {}

    # -- helpers -----------------------------------------------------------

    def anchors(self, memory: EncoderMemory, dtype: torch.dtype) -> Tensor:
        """Inverse-sigmoid line proposals for every memory position, S×4."""
        key = (tuple(memory.level_shapes), self.cfg.proposal_scale, dtype)
        if key not in self._anchor_cache:
            rows = [proposal_array(level_centers(h, w), lvl + 1, self.axis, self.cfg.proposal_scale)
                    for lvl, (h, w) in enumerate(memory.level_shapes)]
            arr = np.clip(np.concatenate(rows), ANCHOR_EPS, 1 - ANCHOR_EPS)
            self._anchor_cache[key] = inverse_sigmoid(torch.as_tensor(arr, dtype=dtype))
        return self._anchor_cache[key]

    def _stop(self, t: Tensor) -> Tensor:
        """Gradient barrier between refinement steps, unless the config disables it."""
        return t.detach() if self.cfg.detach_references else t

    def _pos(self, head: MLP, refs: Tensor) -> Tensor:
        return head(sine_embed(refs, self.cfg.channels).mean(1))

    def _line_scale(self, lines: Tensor) -> Tensor:
        extent = (lines[:, 2:4] - lines[:, 0:2]).norm(dim=1).clamp_min(MIN_LINE_EXTENT)
        return (0.5 * extent / self.cfg.deform_points).view(-1, 1, 1, 1, 1, 1)

    def _cell_scale(self, memory: EncoderMemory, like: Tensor) -> Tensor:
        sizes = [[0.5 / w, 0.5 / h] for h, w in memory.level_shapes]
        return like.new_tensor(sizes).view(1, 1, -1, 1, 1, 2)

    # -- stages ------------------------------------------------------------

    def select_queries(self, memory: EncoderMemory):
        seq = memory.sequence
        if self.k > seq.shape[0]:
            raise ValueError(f"K={self.k} exceeds memory length {seq.shape[0]}")
        out_mem = self.enc_output(seq)
        logits = self.enc_score_head(out_mem).squeeze(-1)
        line_logits = self.enc_line_head(out_mem) + self.anchors(memory, seq.dtype)
        lines = canonicalize_tensor(torch.sigmoid(line_logits), self.axis)
        topk = torch.topk(logits.detach(), self.k, sorted=True).indices
        init = inverse_sigmoid(self._stop(lines[topk]))
        content = seq[topk]
        return logits, lines, topk, init, content

    def forward(self, memory: EncoderMemory, fine_selector: FineSelector | None = None) -> AxisOutput:
        logits, lines, topk, init, tgt = self.select_queries(memory)
        out = AxisOutput(self.axis, logits, lines, topk, init)
        if self.stages == DecoderStages.TWO_STAGE:
            tgt = self._coarse(out, tgt, memory)
            self._fine(out, tgt, memory, fine_selector)
        else:
            self._unified(out, tgt, memory)
        return out

    def _coarse(self, out: AxisOutput, tgt: Tensor, memory: EncoderMemory) -> Tensor:
        ref_logit = out.init_logits
        for layer, cls_head, reg_head in zip(self.coarse_layers, self.class_heads, self.coarse_heads):
            lines = torch.sigmoid(ref_logit)
            refs = lines.view(-1, 2, 2)
            tgt = layer(tgt, self._pos(self.coarse_pos, refs), refs, self._line_scale(lines), memory)
            delta = reg_head(tgt)
            new_logit = ref_logit + delta
            out.coarse.append(StageOutput(
                score_logits=cls_head(tgt).squeeze(-1),
                lines=canonicalize_tensor(torch.sigmoid(new_logit), self.axis),
                raw_logits=new_logit, deltas=delta))
            ref_logit = self._stop(new_logit)
        return tgt

    def _fine(self, out: AxisOutput, tgt: Tensor, memory: EncoderMemory,
              selector: FineSelector | None) -> None:
        last = out.coarse[-1]
        if selector is None:
            index = torch.arange(self.k)
        else:
            index = selector(last.score_logits.detach(), last.lines.detach()).to(torch.long)
        out.fine_index = index
        if index.numel() == 0:
            return
        strips = sample_points_tensor(self._stop(last.lines)[index], self.cfg.num_points)
        ref_logit = inverse_sigmoid(strips)
        tgt = tgt[index]
        for layer in self.fine_layers:
            refs = torch.sigmoid(ref_logit)
            tgt = layer(tgt, self._pos(self.fine_pos, refs), refs, self._cell_scale(memory, refs), memory)
            delta = self.fine_head(tgt).view(-1, self.cfg.num_points, 2)
            new_logit = ref_logit + delta
            out.fine.append(StageOutput(strips=torch.sigmoid(new_logit), query_index=index,
                                        raw_logits=new_logit, deltas=delta))
            ref_logit = self._stop(new_logit)

    def _unified(self, out: AxisOutput, tgt: Tensor, memory: EncoderMemory) -> None:
        p = self.cfg.num_points
        ref_logit = inverse_sigmoid(sample_points_tensor(torch.sigmoid(out.init_logits), p))
        for layer, cls_head, reg_head in zip(self.coarse_layers, self.class_heads, self.coarse_heads):
            refs = torch.sigmoid(ref_logit)
            tgt = layer(tgt, self._pos(self.coarse_pos, refs), refs, self._cell_scale(memory, refs), memory)
            delta = reg_head(tgt).view(-1, p, 2)
            new_logit = ref_logit + delta
            strips = torch.sigmoid(new_logit)
            out.coarse.append(StageOutput(
                score_logits=cls_head(tgt).squeeze(-1),
                lines=canonicalize_tensor(strip_chord(strips), self.axis),
                strips=strips, raw_logits=new_logit, deltas=delta))
            ref_logit = self._stop(new_logit)
