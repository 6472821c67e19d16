"""One-to-one assignment of predicted separators to ground-truth separators.

The cost of pairing ground truth ``i`` with prediction ``k`` is

    lambda_coord * |l_gt_i - l_k|_1  +/-  lambda_cls * c_k

(optionally plus ``lambda_coord`` times the mean per-point L1 distance of the
line strips). The solver is a shortest-augmenting-path Hungarian method; ties
between equally cheap assignments are broken towards the lexicographically
smallest prediction indices, in ground-truth order, so that the solver agrees
exactly with :func:`brute_force_match`.
"""

from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from .geometry import ScoredSeparator
from .numerics import NonFiniteError


class ClassTermSign(str, enum.Enum):
    PLUS = "plus"  # + lambda_cls * c, prefers low scores
    MINUS = "minus"  # - lambda_cls * c


@dataclass(frozen=True)
class MatchConfig:
    lambda_coord: float = 3.0
    lambda_cls: float = 2.0
    class_term_sign: ClassTermSign = ClassTermSign.MINUS
    use_single_line: bool = True
    use_line_strip: bool = False

    def __post_init__(self):
        if self.lambda_coord < 0 or self.lambda_cls < 0:
            raise ValueError("matching weights must be non-negative")
        if not (self.use_single_line or self.use_line_strip):
            raise ValueError("at least one geometric matching criterion is required")

    @property
    def sign(self) -> float:
        return 1.0 if self.class_term_sign == ClassTermSign.PLUS else -1.0


@dataclass
class MatchResult:
    assignment: dict[int, int]  # ground-truth index -> prediction index
    total_cost: float

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        gt = np.array(sorted(self.assignment), dtype=np.int64)
        pred = np.array([self.assignment[i] for i in gt], dtype=np.int64)
        return gt, pred


class OverfullGroundTruthError(ValueError):
    """More ground-truth separators than prediction slots."""


def pair_cost(gt_line, pred: ScoredSeparator, cfg: MatchConfig = MatchConfig(),
              gt_strip=None) -> float:
    gt_line = np.asarray(gt_line, dtype=np.float64).reshape(1, 4)
    strips_gt = None if gt_strip is None else np.asarray(gt_strip)[None]
    strips_pred = None if pred.strip is None else pred.strip.points[None]
    c = cost_matrix(gt_line, pred.line.coords()[None], np.array([pred.score]), cfg,
                    strips_gt, strips_pred)
    return float(c[0, 0])


def cost_matrix(gt_lines: np.ndarray, pred_lines: np.ndarray, pred_scores: np.ndarray,
                cfg: MatchConfig = MatchConfig(), gt_strips: np.ndarray | None = None,
                pred_strips: np.ndarray | None = None) -> np.ndarray:
    """``N×K`` pair costs; inputs must already be in canonical endpoint order."""
    gt_lines = np.asarray(gt_lines, dtype=np.float64).reshape(-1, 4)
    pred_lines = np.asarray(pred_lines, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(pred_scores, dtype=np.float64).reshape(-1)
    cost = np.zeros((len(gt_lines), len(pred_lines)))
    if cfg.use_single_line:
        cost += cfg.lambda_coord * np.abs(gt_lines[:, None, :] - pred_lines[None, :, :]).sum(-1)
    if cfg.use_line_strip:
        if gt_strips is None or pred_strips is None:
            raise ValueError("line-strip matching needs strips on both sides")
        gs = np.asarray(gt_strips, dtype=np.float64)
        ps = np.asarray(pred_strips, dtype=np.float64)
        if gs.shape[1:] != ps.shape[1:]:
            raise ValueError("strip lengths differ")
        per_point = np.abs(gs[:, None] - ps[None]).sum(-1)  # N×K×P
        cost += cfg.lambda_coord * per_point.mean(-1)
    cost += cfg.sign * cfg.lambda_cls * scores[None, :]
    return cost


def _assignment_cost(cost: np.ndarray, cols) -> float:
    total = 0.0
    for i, j in enumerate(cols):
        total += float(cost[i, j])
    return total


def _tolerance(cost: np.ndarray) -> float:
    return 1e-9 * (1.0 + float(np.abs(cost).max(initial=0.0)))


def _shortest_augmenting_path(cost: np.ndarray):
    """Rectangular Hungarian method (rows <= cols) with dual potentials.

    Returns ``(col_of_row, u, v)``. Unassigned columns keep ``v == 0`` and
    assigned ones ``v <= 0``, so the potentials form an optimal dual.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # 1-based row owning column j; 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            col_of_row[owner[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _lexicographic_optimum(cost: np.ndarray, cols: np.ndarray, u: np.ndarray,
                           v: np.ndarray) -> np.ndarray:
    """Among optimal assignments pick the one with the smallest columns in row order.

    Optimal assignments are exactly those using only tight edges that cover
    every column with a strictly negative potential, so each candidate swap
    is a reachability question in the tight-edge graph.
    """
    n, m = cost.shape
    tol = _tolerance(cost)
    tight = np.abs(cost - u[:, None] - v[None, :]) <= tol
    forced = v < -tol
    cols = cols.copy()
    row_of_col = np.full(m, -1, dtype=np.int64)
    row_of_col[cols] = np.arange(n)

    def reroute(i: int, j: int) -> list[tuple[int, int]] | None:
        old = cols[i]
        r = row_of_col[j]
        if r == -1:
            return [(i, j)] if not forced[old] else None
        if r < i:
            return None
        # alternating path from row r over unfixed rows, ending at `old` or at
        # a free column (the latter only if `old` may be left uncovered)
        parent = {}
        seen_cols = {j}
        queue = deque([r])
        while queue:
            row = queue.popleft()
            for c in np.flatnonzero(tight[row]):
                c = int(c)
                if c in seen_cols:
                    continue
                seen_cols.add(c)
                parent[c] = row
                owner = row_of_col[c]
                if c == old or (owner == -1 and not forced[old]):
                    moves = [(i, j)]
                    while True:
                        prow = parent[c]
                        moves.append((prow, c))
                        if prow == r:
                            return moves
                        c = cols[prow]
                if owner > i:
                    queue.append(owner)
        return None

    for i in range(n):
        for j in np.flatnonzero(tight[i, :cols[i]]):
            moves = reroute(i, int(j))
            if moves is None:
                continue
            for row, c in moves:
                row_of_col[cols[row]] = -1
            for row, c in moves:
                cols[row] = c
                row_of_col[c] = row
            break
    return cols


def _check_finite(cost: np.ndarray) -> None:
    if not np.isfinite(cost).all():
        raise NonFiniteError("matching cost contains NaN or Inf")


def _check_sizes(n: int, k: int) -> None:
    if n > k:
        raise OverfullGroundTruthError(
            f"{n} ground-truth separators exceed {k} prediction slots; raise K")


def solve_assignment(cost: np.ndarray) -> MatchResult:
    """Minimum-cost injective assignment of the rows of ``cost`` to its columns."""
    cost = np.asarray(cost, dtype=np.float64)
    n, k = cost.shape
    _check_sizes(n, k)
    _check_finite(cost)
    if n == 0:
        return MatchResult({}, 0.0)
    cols, u, v = _shortest_augmenting_path(cost)
    cols = _lexicographic_optimum(cost, cols, u, v)
    return MatchResult({i: int(c) for i, c in enumerate(cols)}, _assignment_cost(cost, cols))


def brute_force_assignment(cost: np.ndarray) -> MatchResult:
    cost = np.asarray(cost, dtype=np.float64)
    n, k = cost.shape
    _check_sizes(n, k)
    _check_finite(cost)
    if n > 8 or k > 8:
        raise ValueError("brute-force matching is limited to N, K <= 8")
    tol = _tolerance(cost)
    best_cols: tuple[int, ...] = ()
    best = np.inf
    for cols in itertools.permutations(range(k), n):  # lexicographic order
        total = _assignment_cost(cost, cols)
        if total < best - tol:
            best, best_cols = total, cols
    return MatchResult({i: int(c) for i, c in enumerate(best_cols)},
                       _assignment_cost(cost, best_cols))


def _separator_arrays(preds: list[ScoredSeparator]):
    lines = np.array([p.line.coords() for p in preds]).reshape(-1, 4)
    scores = np.array([p.score for p in preds], dtype=np.float64)
    strips = None
    if preds and all(p.strip is not None for p in preds):
        strips = np.stack([p.strip.points for p in preds])
    return lines, scores, strips


def hungarian_match(gt_lines, preds: list[ScoredSeparator], cfg: MatchConfig = MatchConfig(),
                    gt_strips=None) -> MatchResult:
    lines, scores, strips = _separator_arrays(preds)
    return solve_assignment(cost_matrix(gt_lines, lines, scores, cfg, gt_strips, strips))


def brute_force_match(gt_lines, preds: list[ScoredSeparator], cfg: MatchConfig = MatchConfig(),
                      gt_strips=None) -> MatchResult:
    lines, scores, strips = _separator_arrays(preds)
    return brute_force_assignment(cost_matrix(gt_lines, lines, scores, cfg, gt_strips, strips))
