"""Image → separators → cell grid → structure HTML, in source-image coordinates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .geometry import LineStrip, ScoredSeparator, SingleLine
from .model import SepFormer
from .preprocess import Frame, batch_images
from .reconstruct import (CellGrid, DegenerateTableError, ReconstructConfig, separators_to_grid,
                          structure_html, threshold_filter)

DEFAULT_RESIZE = 256


@dataclass
class InferenceResult:
    rows: list[ScoredSeparator]
    cols: list[ScoredSeparator]
    width: int
    height: int
    grid: CellGrid | None = None
    html: str | None = None
    error: dict | None = None
    candidates: dict = field(default_factory=dict)  # pre-threshold counts per axis

    def document(self, image: str = "") -> dict:
        """Predicted separators in the ground-truth document layout (no cells)."""
        def sep(s: ScoredSeparator) -> dict:
            strip = s.strip.points if s.strip is not None else _straight_strip(s.line, 16)
            return {"line": [float(v) for v in s.line.coords()],
                    "strip": [[float(x), float(y)] for x, y in strip],
                    "score": float(s.score)}
        doc = {"image": image, "width": self.width, "height": self.height,
               "rows": [sep(s) for s in self.rows], "cols": [sep(s) for s in self.cols]}
        if self.html is not None:
            doc["html"] = self.html
        if self.error is not None:
            doc["error"] = self.error
        return doc


def _straight_strip(line: SingleLine, p: int) -> np.ndarray:
    t = np.arange(1, p + 1, dtype=np.float64)[:, None] / p
    a, b = np.array(line.p1), np.array(line.p2)
    return (1 - t) * a + t * b


def _to_source(sep: ScoredSeparator, frame: Frame) -> ScoredSeparator:
    line = SingleLine.from_coords(frame.from_model(sep.line.coords().reshape(2, 2)).reshape(4))
    strip = None if sep.strip is None else LineStrip(frame.from_model(sep.strip.points))
    return ScoredSeparator(sep.score, line, sep.axis, strip)


def predict_separators(model: SepFormer, image: np.ndarray, tau_row: float | None = None,
                       tau_col: float | None = None, resize: int = DEFAULT_RESIZE):
    """Thresholded separators of both axes in normalized source-image coordinates."""
    tau_row = model.cfg.tau_row if tau_row is None else tau_row
    tau_col = model.cfg.tau_col if tau_col is None else tau_col
    dtype = next(model.parameters()).dtype
    batch, frames = batch_images([image], resize)
    with torch.no_grad():
        out = model.predict(batch[0].to(dtype), tau_row, tau_col)
    frame = frames[0]
    rows = [_to_source(s, frame) for s in threshold_filter(out["row"], tau_row)]
    cols = [_to_source(s, frame) for s in threshold_filter(out["col"], tau_col)]
    return rows, cols, {"row": len(out["row"]), "col": len(out["col"])}


def infer_image(model: SepFormer, image: np.ndarray, tau_row: float | None = None,
                tau_col: float | None = None, resize: int = DEFAULT_RESIZE,
                recon: ReconstructConfig = ReconstructConfig()) -> InferenceResult:
    rows, cols, counts = predict_separators(model, image, tau_row, tau_col, resize)
    h, w = image.shape[:2]
    result = InferenceResult(rows, cols, w, h, candidates=counts)
    try:
        result.grid = separators_to_grid(rows, cols, w, h, recon)
        result.html = structure_html(result.grid)
    except DegenerateTableError as err:
        result.error = err.to_dict()
    return result
