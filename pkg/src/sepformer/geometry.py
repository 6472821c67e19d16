"""Separator representations and the line sampling / proposal rules.

Every coordinate lives in the normalized image frame: x and y in [0, 1],
divided by image width and height respectively.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import torch

from .numerics import Tensor


class Axis(str, enum.Enum):
    ROW = "row"
    COL = "col"


@dataclass(frozen=True)
class SingleLine:
    p1: tuple[float, float]
    p2: tuple[float, float]

    @classmethod
    def from_coords(cls, coords) -> "SingleLine":
        x1, y1, x2, y2 = (float(v) for v in coords)
        return cls((x1, y1), (x2, y2))

    def coords(self) -> np.ndarray:
        return np.array([*self.p1, *self.p2], dtype=np.float64)

    def canonical(self, axis: Axis) -> "SingleLine":
        """Rows run left to right, columns top to bottom."""
        k = 0 if axis == Axis.ROW else 1
        if self.p1[k] > self.p2[k]:
            return SingleLine(self.p2, self.p1)
        return self


@dataclass(frozen=True)
class LineStrip:
    points: np.ndarray  # P×2

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("line strip points must be P×2")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class ScoredSeparator:
    score: float
    line: SingleLine
    axis: Axis
    strip: LineStrip | None = None

    def polyline(self) -> np.ndarray:
        """Full path: the start endpoint followed by the strip (or the end)."""
        start = np.array(self.line.p1)[None]
        if self.strip is None:
            return np.vstack([start, np.array(self.line.p2)[None]])
        return np.vstack([start, self.strip.points])


@dataclass(frozen=True)
class GeometryConfig:
    num_points: int = 16
    proposal_scale: float = 0.05
    strides: tuple[int, ...] = field(default=(8, 16, 32))

    def __post_init__(self):
        if self.num_points < 2:
            raise ValueError("num_points must be >= 2")
        if self.proposal_scale <= 0:
            raise ValueError("proposal_scale must be positive")


def sample_points(line: SingleLine, num_points: int) -> LineStrip:
    """Evenly sample a line: point t is ``(1 - t/P) p1 + (t/P) p2`` for t = 1..P.

    The start endpoint is excluded and the end endpoint is reproduced exactly.
    """
    if num_points < 1:
        raise ValueError("num_points must be >= 1")
    p1 = np.asarray(line.p1, dtype=np.float64)
    p2 = np.asarray(line.p2, dtype=np.float64)
    t = np.arange(1, num_points + 1, dtype=np.float64)[:, None] / num_points
    return LineStrip((1 - t) * p1 + t * p2)


def sample_points_tensor(lines: Tensor, num_points: int) -> Tensor:
    """Batched, differentiable form of :func:`sample_points`: ``K×4 -> K×P×2``."""
    t = torch.arange(1, num_points + 1, dtype=lines.dtype, device=lines.device) / num_points
    t = t[None, :, None]
    p1 = lines[:, None, 0:2]
    p2 = lines[:, None, 2:4]
    return (1 - t) * p1 + t * p2


def proposal_length(level: int, scale: float) -> float:
    if level not in (1, 2, 3):
        raise ValueError(f"unknown feature level {level}")
    return 2 ** (level - 1) * scale


def make_line_proposals(level: int, positions, axis: Axis,
                        config: GeometryConfig = GeometryConfig()) -> list[SingleLine]:
    """One anchor segment per feature-map position.

    Rows get a horizontal segment of length ``2**(level-1) * s`` starting at
    the position, columns the vertical equivalent; everything is clamped to
    the unit square.
    """
    arr = proposal_array(np.asarray(positions, dtype=np.float64).reshape(-1, 2),
                         level, axis, config.proposal_scale)
    return [SingleLine.from_coords(row) for row in arr]


def proposal_array(positions: np.ndarray, level: int, axis: Axis, scale: float) -> np.ndarray:
    length = proposal_length(level, scale)
    x, y = positions[:, 0], positions[:, 1]
    if axis == Axis.ROW:
        out = np.stack([x, y, x + length, y], axis=1)
    else:
        out = np.stack([x, y, x, y + length], axis=1)
    return np.clip(out, 0.0, 1.0)


def level_centers(height: int, width: int) -> np.ndarray:
    """Normalized pixel centres of an ``height×width`` map, row-major, as (x, y)."""
    ys, xs = np.meshgrid((np.arange(height) + 0.5) / height,
                         (np.arange(width) + 0.5) / width, indexing="ij")
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


def line_direction(line: SingleLine) -> tuple[float, float]:
    return (line.p2[0] - line.p1[0], line.p2[1] - line.p1[1])


def line_length(line: SingleLine) -> float:
    dx, dy = line_direction(line)
    return float(np.hypot(dx, dy))


def canonicalize_tensor(lines: Tensor, axis: Axis) -> Tensor:
    """Swap endpoints of ``K×4`` lines where needed to reach canonical order."""
    k = 0 if axis == Axis.ROW else 1
    swap = (lines[:, k] > lines[:, k + 2])[:, None]
    flipped = torch.cat([lines[:, 2:4], lines[:, 0:2]], dim=1)
    return torch.where(swap, flipped, lines)


def strip_chord(strips: Tensor) -> Tensor:
    """Line implied by an evenly sampled strip; the start is extrapolated one step back."""
    start = 2 * strips[:, 0] - strips[:, 1]
    return torch.cat([start, strips[:, -1]], dim=1).clamp(0.0, 1.0)
