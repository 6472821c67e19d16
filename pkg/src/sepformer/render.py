"""SVG overlays of separators on the source raster."""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image

ROW_COLOR = "red"
COL_COLOR = "blue"


def _png_data_uri(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


def _points(poly: np.ndarray, width: int, height: int) -> str:
    px = np.asarray(poly, dtype=np.float64) * [width, height]
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in px)


def separator_polylines(doc: dict, axis: str) -> list[np.ndarray]:
    return [np.vstack([np.asarray(s["line"][:2], dtype=np.float64)[None], np.asarray(s["strip"], dtype=np.float64)])
            for s in doc.get(axis, [])]


def render_svg(image: np.ndarray | None, doc: dict, stroke_width: float = 1.5) -> str:
    """Row strips as red polylines and column strips as blue ones over the image."""
    width, height = int(doc["width"]), int(doc["height"])
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
             f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">']
    if image is not None:
        parts.append(f'<image x="0" y="0" width="{width}" height="{height}" xlink:href="{_png_data_uri(image)}"/>')
    for axis, color in (("rows", ROW_COLOR), ("cols", COL_COLOR)):
        for poly in separator_polylines(doc, axis):
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="{stroke_width}" '
                         f'points="{_points(poly, width, height)}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
