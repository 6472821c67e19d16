"""Scoring predicted separator documents against ground-truth documents."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .metrics import adjacency_prf, adjacency_relations, aggregate, grid_teds, prf_from_counts, separator_prf
from .reconstruct import CellGrid, DegenerateTableError, ReconstructConfig, separators_to_grid

DOC_KEYS = ("width", "height", "rows", "cols")
RESERVED_NAMES = frozenset({"manifest", "run_config", "report", "errors", "train_config"})


def document_files(directory: str | Path) -> dict[str, Path]:
    """Per-sample JSON documents of a directory keyed by stem, skipping run bookkeeping."""
    return {p.stem: p for p in sorted(Path(directory).glob("*.json")) if p.stem not in RESERVED_NAMES}


def validate_document(doc: dict, require_cells: bool = False) -> None:
    """Raise ``ValueError`` unless ``doc`` follows the separator document layout."""
    keys = DOC_KEYS + (("cells",) if require_cells else ())
    for key in keys:
        if key not in doc:
            raise ValueError(f"missing '{key}'")
    for axis in ("rows", "cols"):
        for i, s in enumerate(doc[axis]):
            line = np.asarray(s.get("line"), dtype=np.float64)
            strip = np.asarray(s.get("strip"), dtype=np.float64)
            if line.shape != (4,):
                raise ValueError(f"{axis}[{i}].line must hold 4 numbers")
            if strip.ndim != 2 or strip.shape[1] != 2 or len(strip) < 1:
                raise ValueError(f"{axis}[{i}].strip must be a list of [x, y] points")
            if not (np.isfinite(line).all() and np.isfinite(strip).all()):
                raise ValueError(f"{axis}[{i}] has non-finite coordinates")
    for c in doc.get("cells", []):
        if set(c) != {"r0", "r1", "c0", "c1"}:
            raise ValueError("cells need exactly r0, r1, c0, c1")


def document_polylines(doc: dict, axis: str) -> list[np.ndarray]:
    return [np.vstack([np.asarray(s["line"][:2], dtype=np.float64)[None], np.asarray(s["strip"], dtype=np.float64)])
            for s in doc[axis]]


def document_lines(doc: dict, axis: str) -> np.ndarray:
    lines = np.array([s["line"] for s in doc[axis]], dtype=np.float64).reshape(-1, 4)
    k = 0 if axis == "rows" else 1
    flip = lines[:, k] > lines[:, 2 + k]
    lines[flip] = lines[flip][:, [2, 3, 0, 1]]
    return lines


def document_grid(doc: dict, recon: ReconstructConfig = ReconstructConfig(), use_cells: bool = True) -> CellGrid:
    """Grid geometry from the separators; ground-truth cells override the recovered ones."""
    grid = separators_to_grid(document_polylines(doc, "rows"), document_polylines(doc, "cols"),
                              doc["width"], doc["height"], recon)
    if use_cells and doc.get("cells"):
        cells = sorted((c["r0"], c["r1"], c["c0"], c["c1"]) for c in doc["cells"])
        dims = (max(c[1] for c in cells) + 1, max(c[3] for c in cells) + 1)
        if dims != (grid.n_rows, grid.n_cols):
            raise ValueError(f"cells describe {dims[0]}×{dims[1]} but separators give {grid.n_rows}×{grid.n_cols}")
        grid = CellGrid(grid.row_lines, grid.col_lines, sorted(cells, key=lambda c: (c[0], c[2])),
                        grid.n_rows, grid.n_cols, grid.corners, grid.warnings)
    return grid


def evaluate_pair(pred: dict, gt: dict, iou: float = 0.5, tol: float = 0.02,
                  recon: ReconstructConfig = ReconstructConfig()) -> dict:
    sep_counts = [0, 0, 0]
    per_axis = {}
    for axis in ("rows", "cols"):
        prf = separator_prf(document_lines(pred, axis), document_lines(gt, axis), tol)
        per_axis[axis] = prf.to_dict()
        sep_counts[0] += prf.correct
        sep_counts[1] += prf.predicted
        sep_counts[2] += prf.expected
    out = {"separators": prf_from_counts(*sep_counts).to_dict(), "separators_by_axis": per_axis}
    gt_grid = document_grid(gt, recon)
    try:
        pred_grid = document_grid(pred, recon, use_cells=False)
    except DegenerateTableError as err:
        out.update(adjacency=prf_from_counts(0, 0, len(adjacency_relations(gt_grid))).to_dict(),
                   teds_struct=0.0, error=err.to_dict())
        return out
    out["adjacency"] = adjacency_prf(pred_grid, gt_grid, iou).to_dict()
    out["teds_struct"] = grid_teds(pred_grid, gt_grid)
    out["shape"] = {"pred": [pred_grid.n_rows, pred_grid.n_cols], "gt": [gt_grid.n_rows, gt_grid.n_cols]}
    return out


def evaluate_documents(pairs: list[tuple[str, dict, dict]], iou: float = 0.5, tol: float = 0.02) -> dict:
    """Report with per-sample entries (keyed by name) and a corpus aggregate."""
    per = []
    for name, pred, gt in pairs:
        entry = {"name": name}
        entry.update(evaluate_pair(pred, gt, iou, tol))
        per.append(entry)
    return {"iou_threshold": iou, "endpoint_tolerance": tol, "aggregate": aggregate(per), "samples": per}


def evaluate_directories(pred_dir: str | Path, gt_dir: str | Path, iou: float = 0.5, tol: float = 0.02) -> dict:
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds, gts = document_files(pred_dir), document_files(gt_dir)
    if set(preds) != set(gts):
        missing = sorted(set(gts) - set(preds))
        extra = sorted(set(preds) - set(gts))
        raise ValueError(f"prediction/ground-truth mismatch: {len(preds)} vs {len(gts)} files; "
                         f"missing {missing[:5]}, unexpected {extra[:5]}")
    pairs = [(n, json.loads(preds[n].read_text()), json.loads(gts[n].read_text())) for n in sorted(gts)]
    return evaluate_documents(pairs, iou, tol)
