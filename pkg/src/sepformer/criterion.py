"""Training objective: per-layer matching against ground truth and loss aggregation.

Supervised prediction sets per axis:

* encoder proposals (every memory position): classification + line terms
* every coarse layer: classification + line terms
* every fine layer: line-strip term on the queries refined for each target
* one-stage layers carry all four terms

Each term is averaged over the sets that supply it, so switching deep
supervision off changes which sets contribute but not the scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .geometry import Axis
from .losses import (LossBreakdown, LossConfig, angle_loss, axis_breakdown, classification_loss_from_logits,
                     line_loss, linestrip_loss, total_loss)
from .matching import MatchConfig, OverfullGroundTruthError, cost_matrix, solve_assignment
from .model.decoder import AxisOutput, FineSelector
from .numerics import Tensor


@dataclass
class AxisTargets:
    lines: Tensor  # N×4, canonical endpoint order
    strips: Tensor  # N×P×2

    def __len__(self) -> int:
        return int(self.lines.shape[0])


def canonical_target(line: np.ndarray, strip: np.ndarray, axis: Axis) -> tuple[np.ndarray, np.ndarray]:
    """Reverse a separator whose endpoints run against the axis direction.

    The strip excludes the first endpoint and ends on the second, so a
    reversed separator starts at the old last strip point and its strip
    ends on the old first endpoint.
    """
    line = np.asarray(line, dtype=np.float64)
    strip = np.asarray(strip, dtype=np.float64)
    k = 0 if Axis(axis) == Axis.ROW else 1
    if line[k] <= line[2 + k]:
        return line, strip
    path = np.vstack([line[None, 0:2], strip])[::-1]
    return np.concatenate([path[0], path[-1]]), path[1:].copy()


def make_targets(lines, strips, axis: Axis, dtype: torch.dtype = torch.float32) -> AxisTargets:
    lines = np.asarray(lines, dtype=np.float64).reshape(-1, 4)
    strips = np.asarray(strips, dtype=np.float64)
    if len(lines) == 0:
        p = strips.shape[1] if strips.ndim == 3 else 0
        return AxisTargets(torch.zeros((0, 4), dtype=dtype), torch.zeros((0, p, 2), dtype=dtype))
    pairs = [canonical_target(l, s, axis) for l, s in zip(lines, strips)]
    return AxisTargets(torch.as_tensor(np.stack([p[0] for p in pairs]), dtype=dtype),
                       torch.as_tensor(np.stack([p[1] for p in pairs]), dtype=dtype))


@dataclass(frozen=True)
class CriterionConfig:
    match: MatchConfig = field(default_factory=MatchConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    supervise_proposals: bool = True


def _np(t: Tensor | None) -> np.ndarray | None:
    return None if t is None else t.detach().double().cpu().numpy()


def match_predictions(targets: AxisTargets, score_logits: Tensor, lines: Tensor,
                      strips: Tensor | None, cfg: MatchConfig) -> tuple[np.ndarray, np.ndarray]:
    """Hungarian assignment; returns (gt indices, prediction indices) sorted by gt."""
    n, k = len(targets), int(lines.shape[0])
    if n > k:
        raise OverfullGroundTruthError(f"{n} ground-truth separators but only {k} predictions")
    if n == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    use_strips = cfg.use_line_strip and strips is not None
    if cfg.use_line_strip and not use_strips:
        # stripless sets (proposals, coarse lines) fall back to the line criterion
        cfg = replace(cfg, use_line_strip=False, use_single_line=True)
    scores = torch.sigmoid(score_logits.detach()).double().cpu().numpy()
    cost = cost_matrix(_np(targets.lines), _np(lines), scores, cfg,
                       _np(targets.strips) if use_strips else None, _np(strips) if use_strips else None)
    return solve_assignment(cost).pairs()


def training_selector(targets: AxisTargets, cfg: MatchConfig) -> FineSelector:
    """Selects the final coarse layer's matched queries, in ground-truth order."""
    def select(score_logits: Tensor, lines: Tensor) -> Tensor:
        _, pred = match_predictions(targets, score_logits, lines, None, cfg)
        return torch.as_tensor(pred, dtype=torch.long)
    return select


class _Terms:
    def __init__(self):
        self.parts: dict[str, list[Tensor]] = {"cls": [], "angle": [], "line": [], "linestrip": []}

    def add(self, name: str, value: Tensor) -> None:
        self.parts[name].append(value)

    def mean(self, name: str, like: Tensor) -> Tensor:
        vals = self.parts[name]
        return torch.stack(vals).mean() if vals else like.sum() * 0.0


def _labels(k: int, pred: np.ndarray, like: Tensor) -> Tensor:
    labels = torch.zeros(k, dtype=like.dtype)
    labels[torch.as_tensor(pred, dtype=torch.long)] = 1.0
    return labels


def _scored_set(terms: _Terms, targets: AxisTargets, logits: Tensor, lines: Tensor,
                strips: Tensor | None, cfg: CriterionConfig) -> None:
    gt, pred = match_predictions(targets, logits, lines, strips, cfg.match)
    g = torch.as_tensor(gt, dtype=torch.long)
    p = torch.as_tensor(pred, dtype=torch.long)
    terms.add("cls", classification_loss_from_logits(_labels(lines.shape[0], pred, logits), logits, cfg.loss))
    terms.add("angle", angle_loss(targets.lines[g], lines[p], cfg.loss))
    terms.add("line", line_loss(targets.lines[g], lines[p]))
    if strips is not None:
        terms.add("linestrip", linestrip_loss(targets.strips[g], strips[p]))


def axis_loss(out: AxisOutput, targets: AxisTargets, cfg: CriterionConfig = CriterionConfig()) -> LossBreakdown:
    """Loss of one axis of one image; the fine stage must have been run with
    :func:`training_selector` for the same targets."""
    targets = AxisTargets(targets.lines.to(out.proposal_lines.dtype), targets.strips.to(out.proposal_lines.dtype))
    terms = _Terms()
    if cfg.supervise_proposals:
        _scored_set(terms, targets, out.proposal_logits, out.proposal_lines, None, cfg)
    coarse = out.coarse if cfg.loss.deep_supervision else out.coarse[-1:]
    for stage in coarse:
        _scored_set(terms, targets, stage.score_logits, stage.lines, stage.strips, cfg)
    fine = out.fine if cfg.loss.deep_supervision else out.fine[-1:]
    n = len(targets)
    for stage in fine:
        if stage.strips.shape[0] != n:
            raise ValueError("fine stage was not driven by the training selector for these targets")
        if cfg.match.use_line_strip:
            # re-match the refined strips among the selected queries
            index = stage.query_index
            chords = out.coarse[-1].lines[index]
            logits = out.coarse[-1].score_logits[index]
            gt, pred = match_predictions(targets, logits, chords, stage.strips, cfg.match)
        else:
            gt = pred = np.arange(n)
        terms.add("linestrip", linestrip_loss(targets.strips[torch.as_tensor(gt, dtype=torch.long)],
                                              stage.strips[torch.as_tensor(pred, dtype=torch.long)]))
    like = out.proposal_logits
    return axis_breakdown(terms.mean("cls", like), terms.mean("angle", like), terms.mean("line", like),
                          terms.mean("linestrip", like), cfg.loss)


def image_loss(outputs: dict[Axis, AxisOutput], targets: dict[Axis, AxisTargets],
               cfg: CriterionConfig = CriterionConfig()) -> LossBreakdown:
    row = axis_loss(outputs[Axis.ROW], targets[Axis.ROW], cfg)
    col = axis_loss(outputs[Axis.COL], targets[Axis.COL], cfg)
    return total_loss(row, col, cfg.loss)


def batch_loss(outputs: list[dict[Axis, AxisOutput]], targets: list[dict[Axis, AxisTargets]],
               cfg: CriterionConfig = CriterionConfig()) -> LossBreakdown:
    """Mean of the per-image objectives."""
    parts = [image_loss(o, t, cfg) for o, t in zip(outputs, targets)]
    names = ("cls", "angle", "line", "linestrip", "axis_total", "grand_total")
    return LossBreakdown(*(torch.stack([getattr(p, k) for p in parts]).mean() for k in names))


def selectors_for(targets: list[dict[Axis, AxisTargets]], cfg: CriterionConfig) -> list[dict[Axis, FineSelector]]:
    return [{axis: training_selector(t[axis], cfg.match) for axis in (Axis.ROW, Axis.COL)} for t in targets]
