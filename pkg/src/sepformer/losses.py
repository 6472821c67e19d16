"""Separator loss terms and their weighted per-axis combination.

All terms take matched pairs (ground truth row ``n`` aligned with prediction
row ``n``) except the classification term, which sees every query.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import torch

from .numerics import Tensor

log = logging.getLogger(__name__)

SCORE_CLAMP = 1e-7
MIN_GT_LENGTH = 1e-6


class ClassificationScope(str, enum.Enum):
    MATCHED_ONLY = "matched-only"
    ALL_QUERIES = "all-queries"


@dataclass(frozen=True)
class LossConfig:
    lambda_cls: float = 1.0
    lambda_angle: float = 1.0
    lambda_line: float = 3.0
    lambda_linestrip: float = 1.0
    angle_loss_enabled: bool = True
    short_penalty_factor: float = 4.0
    classification_scope: ClassificationScope = ClassificationScope.ALL_QUERIES
    deep_supervision: bool = True

    def __post_init__(self):
        if min(self.lambda_cls, self.lambda_angle, self.lambda_line, self.lambda_linestrip) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.short_penalty_factor <= 0:
            raise ValueError("short_penalty_factor must be positive")


@dataclass
class LossBreakdown:
    cls: Tensor
    angle: Tensor
    line: Tensor
    linestrip: Tensor
    axis_total: Tensor
    grand_total: Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in
                ("cls", "angle", "line", "linestrip", "axis_total", "grand_total")}


def _zero(like: Tensor) -> Tensor:
    return like.sum() * 0.0


def classification_loss(labels: Tensor, scores: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """Mean binary cross-entropy; ``labels`` is 1 for matched queries, 0 otherwise."""
    labels = labels.to(scores.dtype)
    if cfg.classification_scope == ClassificationScope.MATCHED_ONLY:
        keep = labels > 0.5
        labels, scores = labels[keep], scores[keep]
    if scores.numel() == 0:
        return _zero(scores)
    p = scores.clamp(SCORE_CLAMP, 1 - SCORE_CLAMP)
    bce = -(labels * torch.log(p) + (1 - labels) * torch.log(1 - p))
    return bce.mean()


def classification_loss_from_logits(labels: Tensor, logits: Tensor,
                                    cfg: LossConfig = LossConfig()) -> Tensor:
    """Same value as :func:`classification_loss` on ``sigmoid(logits)``, computed stably."""
    labels = labels.to(logits.dtype)
    if cfg.classification_scope == ClassificationScope.MATCHED_ONLY:
        keep = labels > 0.5
        labels, logits = labels[keep], logits[keep]
    if logits.numel() == 0:
        return _zero(logits)
    lo = torch.log(torch.tensor(SCORE_CLAMP / (1 - SCORE_CLAMP), dtype=logits.dtype))
    logits = logits.clamp(lo, -lo)
    return torch.nn.functional.binary_cross_entropy_with_logits(logits, labels)


def angle_loss(gt_lines: Tensor, pred_lines: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """Mean of ``1 - cos(d_gt, d_pred) / (|d_gt| * factor)`` over matched pairs.

    Ground-truth separators shorter than ``MIN_GT_LENGTH`` are skipped. A
    zero-length predicted direction counts as cosine 0.
    """
    if gt_lines.shape[0] == 0:
        return _zero(pred_lines)
    d_gt = gt_lines[:, 2:4] - gt_lines[:, 0:2]
    d_pred = pred_lines[:, 2:4] - pred_lines[:, 0:2]
    len_gt = d_gt.norm(dim=1)
    keep = len_gt > MIN_GT_LENGTH
    if not bool(keep.any()):
        return _zero(pred_lines)
    d_gt, d_pred, len_gt = d_gt[keep], d_pred[keep], len_gt[keep]
    len_pred_sq = (d_pred * d_pred).sum(1)
    degenerate = len_pred_sq <= 0
    if bool(degenerate.any()):
        log.debug("angle loss: %d zero-length predictions", int(degenerate.sum()))
    safe = torch.where(degenerate, torch.ones_like(len_pred_sq), len_pred_sq)
    cos = (d_gt * d_pred).sum(1) / (len_gt * safe.sqrt())
    cos = torch.where(degenerate, torch.zeros_like(cos), cos)
    return (1 - cos / (len_gt * cfg.short_penalty_factor)).mean()


def line_loss(gt_lines: Tensor, pred_lines: Tensor) -> Tensor:
    """Mean over pairs of the summed absolute coordinate differences."""
    if gt_lines.shape[0] == 0:
        return _zero(pred_lines)
    return (gt_lines - pred_lines).abs().sum(1).mean()


def linestrip_loss(gt_strips: Tensor, pred_strips: Tensor) -> Tensor:
    """Mean over pairs of the per-point L1 distance averaged over the strip."""
    if gt_strips.shape[1:] != pred_strips.shape[1:]:
        raise ValueError(f"strip shapes differ: {tuple(gt_strips.shape)} vs {tuple(pred_strips.shape)}")
    if gt_strips.shape[0] == 0:
        return _zero(pred_strips)
    return (gt_strips - pred_strips).abs().sum(-1).mean(-1).mean()


def axis_breakdown(cls: Tensor, angle: Tensor, line: Tensor, linestrip: Tensor,
                   cfg: LossConfig = LossConfig()) -> LossBreakdown:
    if not cfg.angle_loss_enabled:
        angle = angle * 0.0
    total = (cfg.lambda_cls * cls + cfg.lambda_angle * angle
             + cfg.lambda_line * line + cfg.lambda_linestrip * linestrip)
    return LossBreakdown(cls, angle, line, linestrip, total, total)


def total_loss(row: LossBreakdown, col: LossBreakdown, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """Row plus column objective; terms are summed across the two axes."""
    r = axis_breakdown(row.cls, row.angle, row.line, row.linestrip, cfg)
    c = axis_breakdown(col.cls, col.angle, col.line, col.linestrip, cfg)
    grand = r.axis_total + c.axis_total
    return LossBreakdown(r.cls + c.cls, r.angle + c.angle, r.line + c.line,
                         r.linestrip + c.linestrip, grand, grand)
