"""Independent reference computations used to check the package.

Nothing here imports the code under test; each function is the slow,
obviously-correct version of something the package does quickly.
"""

from __future__ import annotations

import functools
import itertools

import numpy as np
import torch


def central_differences(fn, inputs: list[torch.Tensor], h: float = 1e-5) -> list[torch.Tensor]:
    """Gradient of scalar ``fn(*inputs)`` by symmetric differences, one coordinate at a time."""
    grads = []
    for x in inputs:
        g = torch.zeros_like(x)
        flat = x.detach().reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = float(fn(*inputs))
            flat[i] = orig - h
            down = float(fn(*inputs))
            flat[i] = orig
            g.view(-1)[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def analytic_gradients(fn, inputs: list[torch.Tensor]) -> list[torch.Tensor]:
    for x in inputs:
        x.grad = None
    fn(*inputs).backward()
    return [x.grad.detach().clone() if x.grad is not None else torch.zeros_like(x) for x in inputs]


def relative_error(a: list[torch.Tensor], b: list[torch.Tensor]) -> float:
    num = sum(float((x - y).pow(2).sum()) for x, y in zip(a, b)) ** 0.5
    den = max(sum(float(x.pow(2).sum()) for x in a) ** 0.5, sum(float(y.pow(2).sum()) for y in b) ** 0.5, 1e-12)
    return num / den


def gradient_check(fn, inputs: list[torch.Tensor], h: float = 1e-5) -> float:
    with torch.no_grad():
        numeric = central_differences(fn, [x for x in inputs], h)
    analytic = analytic_gradients(fn, inputs)
    return relative_error(analytic, numeric)


def enumerate_assignments(cost: np.ndarray) -> tuple[float, tuple[int, ...]]:
    """Minimum-cost injection rows→columns by exhaustive search.

    Candidates are visited in lexicographic order and a later one replaces the
    incumbent only when strictly cheaper by more than rounding noise, so the
    lexicographically smallest optimum wins ties.
    """
    n, k = cost.shape
    best, best_cols = None, ()
    for cols in itertools.permutations(range(k), n):
        total = 0.0
        for i, j in enumerate(cols):
            total += float(cost[i, j])
        if best is None or total < best - 1e-9 * max(1.0, abs(best)):
            best, best_cols = total, cols
    return (0.0 if best is None else best), best_cols


def bilinear_reference(feat: np.ndarray, x: float, y: float) -> np.ndarray:
    """Bilinear value at normalized (x, y) with nodes at pixel centres, border clamped."""
    c, h, w = feat.shape
    u = min(max(x * w - 0.5, 0.0), w - 1)
    v = min(max(y * h - 0.5, 0.0), h - 1)
    j0, i0 = int(np.floor(u)), int(np.floor(v))
    j1, i1 = min(j0 + 1, w - 1), min(i0 + 1, h - 1)
    a, b = u - j0, v - i0
    return ((1 - a) * (1 - b) * feat[:, i0, j0] + a * (1 - b) * feat[:, i0, j1]
            + (1 - a) * b * feat[:, i1, j0] + a * b * feat[:, i1, j1])


def separating_edges(n_rows: int, n_cols: int, spans) -> tuple[int, int]:
    """Number of row and column separator segments, by walking every unit edge.

    A separator is a maximal run of consecutive unit edges on one boundary
    line, each lying between two different cells (or on the table border).
    """
    label = {}
    for k, (r0, r1, c0, c1) in enumerate(spans):
        for r in range(r0, r1 + 1):
            for c in range(c0, c1 + 1):
                label[r, c] = ("span", k)

    def cell(r, c):
        return label.get((r, c), ("unit", r, c))

    rows = 0
    for k in range(n_rows + 1):
        prev = False
        for c in range(n_cols):
            edge = k in (0, n_rows) or cell(k - 1, c) != cell(k, c)
            rows += edge and not prev
            prev = edge
    cols = 0
    for k in range(n_cols + 1):
        prev = False
        for r in range(n_rows):
            edge = k in (0, n_cols) or cell(r, k - 1) != cell(r, k)
            cols += edge and not prev
            prev = edge
    return rows, cols


def forest_distance(a, b) -> int:
    """Ordered tree edit distance by the textbook forest recursion.

    Trees are ``(label, (child, ...))`` tuples; forests are tuples of trees.
    """
    @functools.lru_cache(maxsize=None)
    def size(f) -> int:
        return sum(1 + size(t[1]) for t in f)

    @functools.lru_cache(maxsize=None)
    def d(f, g) -> int:
        if not f:
            return size(g)
        if not g:
            return size(f)
        (fl, fk), (gl, gk) = f[-1], g[-1]
        return min(
            d(f[:-1] + fk, g) + 1,
            d(f, g[:-1] + gk) + 1,
            d(fk, gk) + d(f[:-1], g[:-1]) + (fl != gl),
        )

    return d((a,), (b,))


def node_to_tuple(node) -> tuple:
    return (node.label, tuple(node_to_tuple(c) for c in node.children))
