"""Structure metrics: cell adjacency relations, TEDS-Struct and separator detection."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from shapely.geometry import Polygon

from .reconstruct import Cell, CellGrid, Node, grid_to_html_structure


class Direction(str, enum.Enum):
    H = "H"  # side by side
    V = "V"  # one above the other


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    correct: int = 0
    predicted: int = 0
    expected: int = 0

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.precision, self.recall, self.f1)

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "correct": self.correct, "predicted": self.predicted, "expected": self.expected}


def prf_from_counts(correct: int, predicted: int, expected: int) -> PRF:
    """Precision/recall/F1; two empty sets agree perfectly, anything else with zero
    expected or predicted items scores 0."""
    if predicted == 0 and expected == 0:
        return PRF(1.0, 1.0, 1.0, 0, 0, 0)
    p = correct / predicted if predicted else 0.0
    r = correct / expected if expected else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return PRF(p, r, f, correct, predicted, expected)


def relation_prf(predicted, expected) -> PRF:
    predicted, expected = set(predicted), set(expected)
    return prf_from_counts(len(predicted & expected), len(predicted), len(expected))


# -- adjacency -------------------------------------------------------------------

Relation = tuple[int, int, Direction]


@dataclass(frozen=True)
class RelationSet:
    relations: frozenset

    def __len__(self) -> int:
        return len(self.relations)

    def __iter__(self):
        return iter(sorted(self.relations, key=lambda r: (r[0], r[1], r[2].value)))


def _overlap(a0: int, a1: int, b0: int, b1: int) -> bool:
    return max(a0, b0) <= min(a1, b1)


def adjacency_relations(grid: CellGrid) -> RelationSet:
    """Pairs of cells sharing part of a grid edge; ids index ``grid.cells``."""
    rels = set()
    cells = grid.cells
    for i, j in itertools.combinations(range(len(cells)), 2):
        a, b = cells[i], cells[j]
        if (a[3] + 1 == b[2] or b[3] + 1 == a[2]) and _overlap(a[0], a[1], b[0], b[1]):
            rels.add((i, j, Direction.H))
        if (a[1] + 1 == b[0] or b[1] + 1 == a[0]) and _overlap(a[2], a[3], b[2], b[3]):
            rels.add((i, j, Direction.V))
    return RelationSet(frozenset(rels))


def _polygon(quad: np.ndarray) -> Polygon:
    poly = Polygon(quad)
    return poly if poly.is_valid else poly.buffer(0)


def match_cells(pred: CellGrid, gt: CellGrid, iou_thresh: float = 0.5) -> dict[int, int]:
    """One-to-one predicted → ground-truth cell matching, greedy by IoU descending."""
    pp = [_polygon(pred.cell_quad(c)) for c in pred.cells]
    gp = [_polygon(gt.cell_quad(c)) for c in gt.cells]
    cands = []
    for i, a in enumerate(pp):
        for j, b in enumerate(gp):
            if not a.intersects(b):
                continue
            inter = a.intersection(b).area
            union = a.area + b.area - inter
            iou = inter / union if union > 0 else 0.0
            if iou >= iou_thresh:
                cands.append((-iou, i, j))
    cands.sort()
    used_p, used_g, out = set(), set(), {}
    for _, i, j in cands:
        if i not in used_p and j not in used_g:
            out[i] = j
            used_p.add(i)
            used_g.add(j)
    return out


def adjacency_prf(pred: CellGrid, gt: CellGrid, iou_thresh: float = 0.5) -> PRF:
    """A predicted relation counts iff both cells matched and the matched GT pair is related."""
    pred_rel, gt_rel = adjacency_relations(pred), adjacency_relations(gt)
    match = match_cells(pred, gt, iou_thresh)
    gt_set = gt_rel.relations
    correct = 0
    for a, b, d in pred_rel.relations:
        if a in match and b in match:
            ga, gb = sorted((match[a], match[b]))
            correct += (ga, gb, d) in gt_set
    return prf_from_counts(correct, len(pred_rel), len(gt_rel))


# -- tree edit distance ----------------------------------------------------------------

class _Indexed:
    """Postorder numbering with leftmost-leaf descendants and keyroots."""

    def __init__(self, root: Node):
        self.labels: list[str] = []
        self.lmd: list[int] = []
        self.parent: list[int] = []

        def visit(node: Node) -> int:
            first = None
            kids = []
            for child in node.children:
                idx = visit(child)
                kids.append(idx)
                if first is None:
                    first = self.lmd[idx]
            me = len(self.labels)
            self.labels.append(node.label)
            self.lmd.append(me if first is None else first)
            self.parent.append(-1)
            for k in kids:
                self.parent[k] = me
            return me

        visit(root)
        seen = {}
        for i, l in enumerate(self.lmd):
            seen[l] = i  # highest node per leftmost leaf
        self.keyroots = sorted(seen.values())

    def __len__(self) -> int:
        return len(self.labels)


def tree_edit_distance(a: Node, b: Node) -> int:
    """Ordered tree edit distance with unit insert, delete and relabel costs."""
    ta, tb = _Indexed(a), _Indexed(b)
    n, m = len(ta), len(tb)
    td = np.zeros((n, m), dtype=np.int64)
    for i in ta.keyroots:
        for j in tb.keyroots:
            li, lj = ta.lmd[i], tb.lmd[j]
            rows, cols = i - li + 2, j - lj + 2
            fd = np.zeros((rows, cols), dtype=np.int64)
            fd[:, 0] = np.arange(rows)
            fd[0, :] = np.arange(cols)
            for x in range(li, i + 1):
                for y in range(lj, j + 1):
                    dx, dy = x - li + 1, y - lj + 1
                    if ta.lmd[x] == li and tb.lmd[y] == lj:
                        relabel = int(ta.labels[x] != tb.labels[y])
                        fd[dx, dy] = min(fd[dx - 1, dy] + 1, fd[dx, dy - 1] + 1, fd[dx - 1, dy - 1] + relabel)
                        td[x, y] = fd[dx, dy]
                    else:
                        px, py = ta.lmd[x] - li, tb.lmd[y] - lj
                        fd[dx, dy] = min(fd[dx - 1, dy] + 1, fd[dx, dy - 1] + 1, fd[px, py] + td[x, y])
    return int(td[n - 1, m - 1])


def _ancestors(t: _Indexed) -> list[set[int]]:
    out = []
    for i in range(len(t)):
        s, p = set(), t.parent[i]
        while p >= 0:
            s.add(p)
            p = t.parent[p]
        out.append(s)
    return out


def brute_force_tree_distance(a: Node, b: Node, max_nodes: int = 8) -> int:
    """Exhaustive minimum over all valid edit mappings (test oracle for tiny trees).

    A mapping is a one-to-one node pairing that preserves ancestry and
    left-to-right order; its cost is the relabels on mapped pairs plus every
    unmapped node on either side.
    """
    ta, tb = _Indexed(a), _Indexed(b)
    if len(ta) > max_nodes or len(tb) > max_nodes:
        raise ValueError(f"trees larger than {max_nodes} nodes")
    anc_a, anc_b = _ancestors(ta), _ancestors(tb)

    def left_of(t: _Indexed, anc, x: int, y: int) -> bool:
        # x precedes y in postorder and is not its descendant
        return x < y and y not in anc[x]

    def compatible(pairs, i, j) -> bool:
        for k, l in pairs:
            if (k in anc_a[i]) != (l in anc_b[j]) or (i in anc_a[k]) != (j in anc_b[l]):
                return False
            if left_of(ta, anc_a, k, i) != left_of(tb, anc_b, l, j):
                return False
            if left_of(ta, anc_a, i, k) != left_of(tb, anc_b, j, l):
                return False
        return True

    n, m = len(ta), len(tb)
    best = n + m

    def search(i: int, pairs: list, used: set, relabels: int) -> None:
        nonlocal best
        if i == n:
            cost = relabels + (n - len(pairs)) + (m - len(pairs))
            best = min(best, cost)
            return
        search(i + 1, pairs, used, relabels)
        for j in range(m):
            if j not in used and compatible(pairs, i, j):
                pairs.append((i, j))
                used.add(j)
                search(i + 1, pairs, used, relabels + int(ta.labels[i] != tb.labels[j]))
                pairs.pop()
                used.discard(j)

    search(0, [], set(), 0)
    return best


def teds_struct(pred: Node, gt: Node) -> float:
    size = max(pred.size(), gt.size())
    return 1.0 - tree_edit_distance(pred, gt) / size


def grid_teds(pred: CellGrid, gt: CellGrid) -> float:
    return teds_struct(grid_to_html_structure(pred), grid_to_html_structure(gt))


# -- separator detection -------------------------------------------------------------

def endpoint_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise max endpoint distance between canonical lines ``A×4`` and ``B×4``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    d1 = np.linalg.norm(a[:, None, 0:2] - b[None, :, 0:2], axis=-1)
    d2 = np.linalg.norm(a[:, None, 2:4] - b[None, :, 2:4], axis=-1)
    return np.maximum(d1, d2)


def separator_prf(pred_lines, gt_lines, tol: float = 0.02) -> PRF:
    """Detection scores: a prediction is a hit when both endpoints lie within
    ``tol`` of a distinct ground-truth separator's endpoints (maximum matching)."""
    pred_lines = np.asarray(pred_lines, dtype=np.float64).reshape(-1, 4)
    gt_lines = np.asarray(gt_lines, dtype=np.float64).reshape(-1, 4)
    correct = 0
    if len(pred_lines) and len(gt_lines):
        hit = endpoint_distance(pred_lines, gt_lines) <= tol
        rows, cols = linear_sum_assignment(~hit)
        correct = int(hit[rows, cols].sum())
    return prf_from_counts(correct, len(pred_lines), len(gt_lines))


# -- reports ---------------------------------------------------------------------------

def mean(values) -> float:
    values = list(values)
    return float(np.mean(values)) if values else 0.0


def aggregate(per_sample: list[dict]) -> dict:
    """Corpus summary: micro-averaged P/R/F1 over counts plus mean TEDS-Struct."""
    out = {"samples": len(per_sample)}
    for key in ("adjacency", "separators"):
        parts = [s[key] for s in per_sample if s.get(key) is not None]
        if parts:
            out[key] = prf_from_counts(sum(p["correct"] for p in parts), sum(p["predicted"] for p in parts),
                                       sum(p["expected"] for p in parts)).to_dict()
    teds = [s["teds_struct"] for s in per_sample if s.get("teds_struct") is not None]
    out["teds_struct"] = mean(teds)
    out["errors"] = sum(1 for s in per_sample if s.get("error"))
    return out
