"""From separator sets to a logical cell grid and structure-only HTML.

Separators of one axis are grouped into grid lines (near-duplicates merge,
collinear pieces of a boundary interrupted by merged cells join), the grid
lines are intersected into a base grid of unit slots, and neighbouring slots
are united wherever no separator covers the edge between them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from html import escape

import numpy as np

from .geometry import Axis, ScoredSeparator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReconstructConfig:
    merge_tol: float = 0.01  # mean distance below which overlapping separators are duplicates
    link_tol: float = 0.02  # gap-bridging mismatch below which disjoint pieces share a grid line
    dist_tol: float = 0.01  # how close a separator must run to an edge sample to cover it
    cover_frac: float = 0.5  # fraction of edge samples a single separator must cover
    edge_samples: int = 8

    def __post_init__(self):
        if min(self.merge_tol, self.link_tol, self.dist_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.cover_frac <= 1:
            raise ValueError("cover_frac must lie in (0, 1]")
        if self.edge_samples < 1:
            raise ValueError("edge_samples must be >= 1")


class DegenerateTableError(ValueError):
    """Too few separators on an axis to close a grid."""

    def __init__(self, axis: str, count: int):
        super().__init__(f"degenerate table: {count} {axis} separator(s), at least 2 required")
        self.axis = axis
        self.count = count

    def to_dict(self) -> dict:
        return {"error": "degenerate-table", "axis": self.axis, "count": self.count, "message": str(self)}


Cell = tuple[int, int, int, int]  # r0, r1, c0, c1 inclusive


@dataclass
class CellGrid:
    row_lines: list[np.ndarray]  # R+1 polylines, each M×2, ordered top to bottom
    col_lines: list[np.ndarray]  # C+1 polylines, ordered left to right
    cells: list[Cell]
    n_rows: int
    n_cols: int
    corners: np.ndarray | None = None  # (R+1)×(C+1)×2 grid-line intersections
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        check_tiling(self.cells, self.n_rows, self.n_cols)

    def cell_quad(self, cell: Cell) -> np.ndarray:
        """Corner points tl, tr, br, bl of a cell."""
        if self.corners is None:
            raise ValueError("grid has no geometry")
        r0, r1, c0, c1 = cell
        k = self.corners
        return np.array([k[r0, c0], k[r0, c1 + 1], k[r1 + 1, c1 + 1], k[r1 + 1, c0]])


def check_tiling(cells, n_rows: int, n_cols: int) -> None:
    cover = np.zeros((n_rows, n_cols), dtype=np.int64)
    for r0, r1, c0, c1 in cells:
        if not (0 <= r0 <= r1 < n_rows and 0 <= c0 <= c1 < n_cols):
            raise AssertionError(f"cell {(r0, r1, c0, c1)} outside the {n_rows}×{n_cols} grid")
        cover[r0:r1 + 1, c0:c1 + 1] += 1
    if not (cover == 1).all():
        raise AssertionError("cells do not tile the grid")


def threshold_filter(separators: list[ScoredSeparator], tau: float) -> list[ScoredSeparator]:
    return [s for s in separators if s.score >= tau]


# -- polyline helpers ------------------------------------------------------------

def _polyline(sep) -> np.ndarray:
    if hasattr(sep, "polyline"):
        return np.asarray(sep.polyline(), dtype=np.float64)
    pts = np.asarray(sep, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("separator polylines must be M×2 with M >= 2")
    return pts


def _oriented(pts: np.ndarray, k: int) -> np.ndarray:
    """Points in local frame: column 0 runs along the line, column 1 across it."""
    local = pts[:, [k, 1 - k]]
    order = np.argsort(local[:, 0], kind="stable")
    return local[order]


def _eval(curve: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Across-coordinate of a curve at along-coordinates ``t``, extrapolating linearly."""
    t = np.asarray(t, dtype=np.float64)
    u, v = curve[:, 0], curve[:, 1]
    keep = np.concatenate([[True], np.diff(u) > 1e-12])
    u, v = u[keep], v[keep]
    if len(u) == 1:
        return np.full_like(t, v[0])
    out = np.interp(t, u, v)
    lo, hi = t < u[0], t > u[-1]
    out[lo] = v[0] + (t[lo] - u[0]) * (v[1] - v[0]) / (u[1] - u[0])
    out[hi] = v[-1] + (t[hi] - u[-1]) * (v[-1] - v[-2]) / (u[-1] - u[-2])
    return out


def _slope(curve: np.ndarray, end: bool) -> float:
    a, b = (curve[-2], curve[-1]) if end else (curve[0], curve[1])
    du = b[0] - a[0]
    return 0.0 if abs(du) < 1e-12 else float((b[1] - a[1]) / du)


def _mismatch(a: np.ndarray, b: np.ndarray, cfg: ReconstructConfig) -> float:
    """How far two oriented pieces are from lying on one grid line, in tolerance units.

    Overlapping pieces compare their mean distance over the overlap against
    ``merge_tol``; disjoint pieces bridge the gap with the mean end slope and
    compare the landing error against ``link_tol``.
    """
    lo, hi = max(a[0, 0], b[0, 0]), min(a[-1, 0], b[-1, 0])
    if hi > lo:
        t = np.linspace(lo, hi, 9)
        return float(np.abs(_eval(a, t) - _eval(b, t)).mean()) / cfg.merge_tol
    first, second = (a, b) if a[-1, 0] <= b[0, 0] else (b, a)
    gap = second[0, 0] - first[-1, 0]
    slope = 0.5 * (_slope(first, True) + _slope(second, False))
    predicted = first[-1, 1] + slope * gap
    return abs(predicted - second[0, 1]) / cfg.link_tol


def _point_polyline_distance(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    a, b = poly[:-1], poly[1:]
    d = b - a
    len2 = (d * d).sum(1)
    len2 = np.where(len2 > 0, len2, 1.0)
    rel = points[:, None, :] - a[None]
    t = np.clip((rel * d[None]).sum(-1) / len2[None], 0.0, 1.0)
    nearest = a[None] + t[..., None] * d[None]
    return np.sqrt(((points[:, None, :] - nearest) ** 2).sum(-1)).min(1)


# -- grid lines --------------------------------------------------------------------

def _group(pieces: list[np.ndarray], cfg: ReconstructConfig) -> list[list[int]]:
    """Cluster oriented pieces into grid lines, joining each to its best-fitting group."""
    groups: list[list[int]] = []
    for i, p in enumerate(pieces):
        best, best_score = None, 1.0
        for g in groups:
            score = min(_mismatch(pieces[j], p, cfg) for j in g)
            if score < best_score:
                best, best_score = g, score
        if best is None:
            groups.append([i])
        else:
            best.append(i)
    return groups


def _grid_curve(members: list[np.ndarray]) -> np.ndarray:
    """One oriented curve from a group's pieces; earlier pieces win overlaps."""
    pts = []
    covered: list[tuple[float, float]] = []
    for m in sorted(members, key=lambda m: m[0, 0]):
        keep = np.ones(len(m), dtype=bool)
        for lo, hi in covered:
            keep &= ~((m[:, 0] >= lo) & (m[:, 0] <= hi))
        pts.append(m[keep])
        covered.append((m[0, 0], m[-1, 0]))
    curve = np.concatenate(pts)
    return curve[np.argsort(curve[:, 0], kind="stable")]


def _axis_lines(separators, axis: Axis, aspect: np.ndarray, cfg: ReconstructConfig):
    k = 0 if axis == Axis.ROW else 1
    polys = [_polyline(s) * aspect for s in separators]
    if len(polys) < 2:
        raise DegenerateTableError(axis.value, len(polys))
    pieces = [_oriented(p, k) for p in polys]
    order = sorted(range(len(pieces)), key=lambda i: float(pieces[i][:, 1].mean()))
    pieces = [pieces[i] for i in order]
    polys = [polys[i] for i in order]
    groups = _group(pieces, cfg)
    if len(groups) < 2:
        raise DegenerateTableError(axis.value, len(groups))
    curves = [_grid_curve([pieces[i] for i in g]) for g in groups]
    ranked = sorted(range(len(curves)), key=lambda i: float(curves[i][:, 1].mean()))
    return [curves[i] for i in ranked], polys


def _intersect(row: np.ndarray, col: np.ndarray) -> np.ndarray:
    """Crossing of an oriented row curve (y of x) and column curve (x of y)."""
    x = float(col[:, 1].mean())
    y = float(_eval(row, np.array([x]))[0])
    for _ in range(50):
        x_new = float(_eval(col, np.array([y]))[0])
        y_new = float(_eval(row, np.array([x_new]))[0])
        done = abs(x_new - x) < 1e-13 and abs(y_new - y) < 1e-13
        x, y = x_new, y_new
        if done:
            break
    return np.array([x, y])


def _edge_samples(curve: np.ndarray, t0: float, t1: float, n: int, k: int) -> np.ndarray:
    t = t0 + (np.arange(n) + 0.5) / n * (t1 - t0)
    across = _eval(curve, t)
    local = np.stack([t, across], 1)
    return local[:, [k, 1 - k]] if k == 1 else local


def _covered(samples: np.ndarray, polys: list[np.ndarray], cfg: ReconstructConfig) -> bool:
    need = cfg.cover_frac * len(samples) - 1e-9
    return any((_point_polyline_distance(samples, p) < cfg.dist_tol).sum() >= need for p in polys)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _rectangles(component: set[tuple[int, int]]) -> list[Cell]:
    """Split a slot set into row-major maximal rectangles."""
    left = set(component)
    out = []
    while left:
        r0, c0 = min(left)
        c1 = c0
        while (r0, c1 + 1) in left:
            c1 += 1
        r1 = r0
        while all((r1 + 1, c) in left for c in range(c0, c1 + 1)):
            r1 += 1
        for r in range(r0, r1 + 1):
            for c in range(c0, c1 + 1):
                left.discard((r, c))
        out.append((r0, r1, c0, c1))
    return out


def separators_to_grid(rows, cols, width: int = 1, height: int = 1,
                       cfg: ReconstructConfig = ReconstructConfig()) -> CellGrid:
    """Cell grid from row and column separators in normalized coordinates.

    ``width``/``height`` give the image aspect so that tolerances are measured
    isotropically (in units of the longer image side).
    """
    aspect = np.array([width, height], dtype=np.float64) / max(width, height)
    row_curves, row_polys = _axis_lines(rows, Axis.ROW, aspect, cfg)
    col_curves, col_polys = _axis_lines(cols, Axis.COL, aspect, cfg)
    n_rows, n_cols = len(row_curves) - 1, len(col_curves) - 1
    corners = np.zeros((n_rows + 1, n_cols + 1, 2))
    for i, rc in enumerate(row_curves):
        for j, cc in enumerate(col_curves):
            corners[i, j] = _intersect(rc, cc)

    uf = _UnionFind(n_rows * n_cols)
    n = cfg.edge_samples
    for r in range(n_rows):
        for c in range(n_cols - 1):
            # vertical edge on column line c+1 between row lines r and r+1
            ys = corners[r, c + 1, 1], corners[r + 1, c + 1, 1]
            samples = _edge_samples(col_curves[c + 1], ys[0], ys[1], n, 1)
            if not _covered(samples, col_polys, cfg):
                uf.union(r * n_cols + c, r * n_cols + c + 1)
    for r in range(n_rows - 1):
        for c in range(n_cols):
            xs = corners[r + 1, c, 0], corners[r + 1, c + 1, 0]
            samples = _edge_samples(row_curves[r + 1], xs[0], xs[1], n, 0)
            if not _covered(samples, row_polys, cfg):
                uf.union(r * n_cols + c, (r + 1) * n_cols + c)

    components: dict[int, set] = {}
    for r in range(n_rows):
        for c in range(n_cols):
            components.setdefault(uf.find(r * n_cols + c), set()).add((r, c))
    cells, warnings = [], []
    for comp in components.values():
        rects = _rectangles(comp)
        if len(rects) > 1:
            msg = f"non-rectangular merge region of {len(comp)} slots split into {len(rects)} cells"
            log.debug(msg)
            warnings.append(msg)
        cells.extend(rects)
    cells.sort(key=lambda c: (c[0], c[2]))

    def back(curve: np.ndarray, k: int) -> np.ndarray:
        pts = curve[:, [k, 1 - k]] if k == 1 else curve
        return pts / aspect

    return CellGrid([back(c, 0) for c in row_curves], [back(c, 1) for c in col_curves], cells,
                    n_rows, n_cols, corners / aspect, warnings)


# -- structure tree ----------------------------------------------------------------

@dataclass
class Node:
    tag: str
    attrs: dict[str, int] = field(default_factory=dict)
    children: list["Node"] = field(default_factory=list)

    @property
    def label(self) -> str:
        return " ".join([self.tag] + [f"{k}={v}" for k, v in sorted(self.attrs.items())])

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    def to_html(self) -> str:
        attrs = "".join(f' {k}="{escape(str(v))}"' for k, v in sorted(self.attrs.items()))
        inner = "".join(c.to_html() for c in self.children)
        return f"<{self.tag}{attrs}>{inner}</{self.tag}>"


def grid_to_html_structure(grid: CellGrid) -> Node:
    """table → tr per grid row → td per cell starting in that row, row-major."""
    table = Node("table")
    starts: dict[int, list[Cell]] = {}
    for cell in grid.cells:
        starts.setdefault(cell[0], []).append(cell)
    for r in range(grid.n_rows):
        tr = Node("tr")
        for r0, r1, c0, c1 in sorted(starts.get(r, []), key=lambda c: c[2]):
            attrs = {}
            if r1 > r0:
                attrs["rowspan"] = r1 - r0 + 1
            if c1 > c0:
                attrs["colspan"] = c1 - c0 + 1
            tr.children.append(Node("td", attrs))
        table.children.append(tr)
    return table


def structure_html(grid: CellGrid) -> str:
    return grid_to_html_structure(grid).to_html()
