"""Procedural table images with exact separator and cell ground truth.

A table is laid out on an undistorted canvas, rasterized, and then an
optional rotation + sinusoidal warp is applied to the pixels and, through the
identical forward transform, to every label point.

Separators include the outer table boundary. A merged cell removes the
separator segments that would cut through it, so one boundary can yield
several shorter separators.
"""

from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .geometry import LineStrip, SingleLine
from .numerics import RandomSource

MAX_ROTATION_DEG = 10.0
MAX_WARP = 0.02
EDGE_MARGIN = 0.01


class Style(str, enum.Enum):
    WIRED = "wired"
    WIRELESS = "wireless"
    PARTIAL = "partial-borders"  # horizontal rules only


@dataclass(frozen=True)
class Distortion:
    rotation_deg: float = 0.0
    warp_amplitude: float = 0.0  # peak vertical displacement, fraction of image height
    warp_cycles: float = 1.0  # sine periods across the image width
    warp_phase: float = 0.0

    def __post_init__(self):
        if abs(self.rotation_deg) > MAX_ROTATION_DEG:
            raise ValueError(f"rotation beyond ±{MAX_ROTATION_DEG}°")
        if not 0 <= self.warp_amplitude <= MAX_WARP:
            raise ValueError(f"warp amplitude must lie in [0, {MAX_WARP}]")

    @property
    def is_identity(self) -> bool:
        return self.rotation_deg == 0 and self.warp_amplitude == 0

    @property
    def straight(self) -> bool:
        return self.warp_amplitude == 0


Span = tuple[int, int, int, int]  # r0, r1, c0, c1 inclusive


@dataclass(frozen=True)
class TableSpec:
    n_rows: int
    n_cols: int
    spans: tuple[Span, ...] = ()
    style: Style = Style.WIRED
    distortion: Distortion = Distortion()
    seed: int = 0
    width: int = 320
    height: int = 320
    num_points: int = 16

    def __post_init__(self):
        object.__setattr__(self, "style", Style(self.style))
        object.__setattr__(self, "spans", tuple(tuple(int(v) for v in s) for s in self.spans))
        if not (1 <= self.n_rows <= 20 and 1 <= self.n_cols <= 20):
            raise ValueError("rows and columns must lie in 1..20")
        if self.width < 64 or self.height < 64:
            raise ValueError("image too small")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["style"] = self.style.value
        d["spans"] = [list(s) for s in self.spans]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TableSpec":
        d = dict(d)
        d["distortion"] = Distortion(**d.get("distortion", {}))
        d["spans"] = tuple(tuple(s) for s in d.get("spans", ()))
        return cls(**d)


@dataclass(frozen=True)
class Cell:
    r0: int
    r1: int
    c0: int
    c1: int

    def as_tuple(self) -> Span:
        return (self.r0, self.r1, self.c0, self.c1)


@dataclass
class GroundTruthSeparator:
    line: SingleLine
    strip: LineStrip

    def polyline(self) -> np.ndarray:
        return np.vstack([np.array(self.line.p1)[None], self.strip.points])


@dataclass
class TableGroundTruth:
    image: np.ndarray  # H×W×3 uint8
    rows: list[GroundTruthSeparator]
    cols: list[GroundTruthSeparator]
    cells: list[Cell]
    spec: TableSpec
    n_rows: int = 0
    n_cols: int = 0

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]

    def to_document(self, image_path: str) -> dict:
        def sep(s: GroundTruthSeparator) -> dict:
            return {"line": [float(v) for v in s.line.coords()],
                    "strip": [[float(x), float(y)] for x, y in s.strip.points]}
        return {
            "image": image_path,
            "width": self.width,
            "height": self.height,
            "rows": [sep(s) for s in self.rows],
            "cols": [sep(s) for s in self.cols],
            "cells": [{"r0": c.r0, "r1": c.r1, "c0": c.c0, "c1": c.c1} for c in self.cells],
        }


# -- spans and separators ----------------------------------------------------

def _owner_grid(n_rows: int, n_cols: int, spans) -> np.ndarray:
    owner = -np.ones((n_rows, n_cols), dtype=np.int64)
    for k, (r0, r1, c0, c1) in enumerate(spans):
        if not (0 <= r0 <= r1 < n_rows and 0 <= c0 <= c1 < n_cols):
            raise ValueError(f"span {(r0, r1, c0, c1)} outside the {n_rows}×{n_cols} grid")
        block = owner[r0:r1 + 1, c0:c1 + 1]
        if (block >= 0).any():
            raise ValueError(f"span {(r0, r1, c0, c1)} overlaps another span")
        block[...] = k
    free = owner < 0
    owner[free] = len(spans) + np.arange(int(free.sum()))
    return owner


def separator_runs(owner: np.ndarray) -> tuple[list[tuple[int, int, int]], list[tuple[int, int, int]]]:
    """Separator segments as ``(boundary, start, end)`` index runs.

    Row boundary ``k`` lies above grid row ``k``; its segment covers columns
    ``start..end`` inclusive. Column runs are defined symmetrically.
    """
    n_rows, n_cols = owner.shape

    def runs(present: np.ndarray) -> list[tuple[int, int]]:
        out, start = [], None
        for i, p in enumerate(present):
            if p and start is None:
                start = i
            if not p and start is not None:
                out.append((start, i - 1))
                start = None
        if start is not None:
            out.append((start, len(present) - 1))
        return out

    row_runs = []
    for k in range(n_rows + 1):
        if k in (0, n_rows):
            present = np.ones(n_cols, dtype=bool)
        else:
            present = owner[k - 1] != owner[k]
        row_runs += [(k, a, b) for a, b in runs(present)]
    col_runs = []
    for k in range(n_cols + 1):
        if k in (0, n_cols):
            present = np.ones(n_rows, dtype=bool)
        else:
            present = owner[:, k - 1] != owner[:, k]
        col_runs += [(k, a, b) for a, b in runs(present)]
    return row_runs, col_runs


def validate_spans(n_rows: int, n_cols: int, spans) -> np.ndarray:
    """Owner grid for the spans; rejects overlaps and boundaries erased everywhere."""
    owner = _owner_grid(n_rows, n_cols, spans)
    for k in range(1, n_rows):
        if not (owner[k - 1] != owner[k]).any():
            raise ValueError(f"spans remove every segment of row boundary {k}")
    for k in range(1, n_cols):
        if not (owner[:, k - 1] != owner[:, k]).any():
            raise ValueError(f"spans remove every segment of column boundary {k}")
    return owner


def cells_from_spans(n_rows: int, n_cols: int, spans) -> list[Cell]:
    covered = np.zeros((n_rows, n_cols), dtype=bool)
    cells = []
    for r0, r1, c0, c1 in spans:
        covered[r0:r1 + 1, c0:c1 + 1] = True
        cells.append(Cell(r0, r1, c0, c1))
    for r in range(n_rows):
        for c in range(n_cols):
            if not covered[r, c]:
                cells.append(Cell(r, r, c, c))
    return sorted(cells, key=lambda c: (c.r0, c.c0))


# -- distortion ----------------------------------------------------------------

def _forward_pixels(pts: np.ndarray, d: Distortion, width: int, height: int) -> np.ndarray:
    """Canvas pixel coordinates -> distorted pixel coordinates (warp, then rotate)."""
    x, y = pts[..., 0], pts[..., 1]
    if d.warp_amplitude:
        y = y + d.warp_amplitude * height * np.sin(2 * np.pi * d.warp_cycles * x / width + d.warp_phase)
    if d.rotation_deg:
        th = math.radians(d.rotation_deg)
        cx, cy = width / 2.0, height / 2.0
        dx, dy = x - cx, y - cy
        x = cx + math.cos(th) * dx - math.sin(th) * dy
        y = cy + math.sin(th) * dx + math.cos(th) * dy
    return np.stack([x, y], axis=-1)


def _inverse_pixels(pts: np.ndarray, d: Distortion, width: int, height: int) -> np.ndarray:
    x, y = pts[..., 0], pts[..., 1]
    if d.rotation_deg:
        th = math.radians(d.rotation_deg)
        cx, cy = width / 2.0, height / 2.0
        dx, dy = x - cx, y - cy
        x = cx + math.cos(th) * dx + math.sin(th) * dy
        y = cy - math.sin(th) * dx + math.cos(th) * dy
    if d.warp_amplitude:
        y = y - d.warp_amplitude * height * np.sin(2 * np.pi * d.warp_cycles * x / width + d.warp_phase)
    return np.stack([x, y], axis=-1)


def warp_points(points: np.ndarray, d: Distortion, width: int, height: int) -> np.ndarray:
    """Apply the pixel-space distortion to normalized points."""
    pts = np.asarray(points, dtype=np.float64)
    if d.is_identity:
        return pts.copy()
    scale = np.array([width, height], dtype=np.float64)
    return _forward_pixels(pts * scale, d, width, height) / scale


def warp_labels(strip: LineStrip, d: Distortion, width: int = 320, height: int = 320) -> LineStrip:
    return LineStrip(warp_points(strip.points, d, width, height))


def _remap(canvas: np.ndarray, d: Distortion, fill: float) -> np.ndarray:
    h, w = canvas.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    src = _inverse_pixels(np.stack([xs, ys], axis=-1), d, w, h) - 0.5
    coords = [src[..., 1], src[..., 0]]
    if canvas.ndim == 2:
        return ndimage.map_coordinates(canvas, coords, order=1, mode="constant", cval=fill)
    return np.stack([ndimage.map_coordinates(canvas[..., ch], coords, order=1, mode="constant", cval=fill)
                     for ch in range(canvas.shape[2])], axis=-1)


# -- layout and rendering ----------------------------------------------------------

@dataclass
class _Layout:
    xs: np.ndarray  # column boundaries, canvas pixels
    ys: np.ndarray  # row boundaries
    text_height: float
    pad_x: float


def _layout(spec: TableSpec, rng: RandomSource) -> _Layout:
    w, h = spec.width, spec.height
    left = rng.uniform(0.04, 0.1)
    right = rng.uniform(0.9, 0.96)
    top = rng.uniform(0.04, 0.1)
    bottom = rng.uniform(0.9, 0.96)
    # shrink about the centre until the distorted table clears the border
    for _ in range(40):
        corners = np.array([[left, top], [right, top], [left, bottom], [right, bottom],
                            [(left + right) / 2, top], [(left + right) / 2, bottom]])
        dense = np.concatenate([
            np.stack([np.linspace(left, right, 33), np.full(33, top)], 1),
            np.stack([np.linspace(left, right, 33), np.full(33, bottom)], 1), corners])
        moved = warp_points(dense, spec.distortion, w, h)
        if moved.min() >= EDGE_MARGIN and moved.max() <= 1 - EDGE_MARGIN:
            break
        left, right = 0.5 - 0.95 * (0.5 - left), 0.5 + 0.95 * (right - 0.5)
        top, bottom = 0.5 - 0.95 * (0.5 - top), 0.5 + 0.95 * (bottom - 0.5)
    else:
        raise ValueError("distortion pushes the table outside the image")
    col_w = rng.uniform(1.0, 2.2, spec.n_cols)
    xs = left * w + np.concatenate([[0.0], np.cumsum(col_w)]) / col_w.sum() * (right - left) * w
    if spec.style == Style.WIRELESS:
        row_h = np.ones(spec.n_rows)
    else:
        row_h = rng.uniform(1.0, 1.5, spec.n_rows)
    ys = top * h + np.concatenate([[0.0], np.cumsum(row_h)]) / row_h.sum() * (bottom - top) * h
    min_row = float(np.diff(ys).min())
    text_height = float(np.clip(0.4 * min_row, 3.0, 10.0))
    pad_x = float(np.clip(0.12 * np.diff(xs).min(), 2.0, 6.0))
    return _Layout(xs, ys, text_height, pad_x)


def _draw_text(draw: ImageDraw.ImageDraw, x0: float, x1: float, yc: float, th: float,
               rng: RandomSource, color: int) -> None:
    """Glyph-like strokes filling ``[x0, x1]`` horizontally around ``yc``."""
    char_w = max(2.0, 0.6 * th)
    top, bot = yc - th / 2, yc + th / 2
    x = x0
    while x + char_w <= x1 + 1e-9:
        if rng.random() < 0.15 and x > x0 and x + 2 * char_w <= x1:
            x += char_w  # word gap
            continue
        kind = int(rng.integers(0, 4))
        a, b = x, x + char_w * 0.8
        if kind == 0:
            draw.line([(a, top), (a, bot)], fill=color)
            draw.line([(a, yc), (b, yc)], fill=color)
        elif kind == 1:
            draw.rectangle([a, yc - th / 4, b, bot], outline=color)
        elif kind == 2:
            draw.line([(a, top), (b, bot)], fill=color)
            draw.line([(a, bot), (b, top)], fill=color)
        else:
            draw.line([(a, bot), ((a + b) / 2, top), (b, bot)], fill=color)
        x += char_w
    # pin the visible extent to the requested interval
    draw.line([(x0, yc - th / 4), (x0, yc + th / 4)], fill=color)
    draw.line([(x1, yc - th / 4), (x1, yc + th / 4)], fill=color)


def _render(spec: TableSpec, lay: _Layout, owner: np.ndarray, row_runs, col_runs,
            rng: RandomSource) -> tuple[np.ndarray, np.ndarray]:
    """Canvas image (H×W uint8 gray) and the ruling-line mask, both undistorted."""
    w, h = spec.width, spec.height
    background = int(rng.integers(225, 256))
    img = Image.new("L", (w, h), background)
    mask = Image.new("L", (w, h), 0)
    draw, mdraw = ImageDraw.Draw(img), ImageDraw.Draw(mask)
    ink = int(rng.integers(0, 70))
    line_ink = int(rng.integers(0, 90))
    thick = int(rng.integers(1, 3))

    def rule(p, q):
        draw.line([p, q], fill=line_ink, width=thick)
        mdraw.line([p, q], fill=255, width=thick)

    if spec.style in (Style.WIRED, Style.PARTIAL):
        for k, a, b in row_runs:
            rule((lay.xs[a], lay.ys[k]), (lay.xs[b + 1], lay.ys[k]))
    if spec.style == Style.WIRED:
        for k, a, b in col_runs:
            rule((lay.xs[k], lay.ys[a]), (lay.xs[k], lay.ys[b + 1]))

    # one text line per cell, left aligned at pad_x; each column has one
    # full-width entry so that text gaps pin the column boundaries
    cells = {}
    for r in range(spec.n_rows):
        for c in range(spec.n_cols):
            cells.setdefault(int(owner[r, c]), []).append((r, c))
    full = {}
    for c in range(spec.n_cols):
        singles = [r for r in range(spec.n_rows) if len(cells[int(owner[r, c])]) == 1]
        full[c] = int(rng.choice(singles)) if singles else -1
    for slots in cells.values():
        rs = [r for r, _ in slots]
        cs = [c for _, c in slots]
        r0, r1, c0, c1 = min(rs), max(rs), min(cs), max(cs)
        x0 = lay.xs[c0] + lay.pad_x
        avail = lay.xs[c1 + 1] - lay.pad_x - x0
        frac = 1.0 if (r0 == r1 and c0 == c1 and full[c0] == r0) else rng.uniform(0.3, 1.0)
        yc = 0.5 * (lay.ys[r0] + lay.ys[r1 + 1])
        _draw_text(draw, x0, x0 + frac * avail, yc, lay.text_height, rng, ink)
    return np.asarray(img, dtype=np.float64), np.asarray(mask, dtype=np.float64) / 255.0, background


def generate(spec: TableSpec) -> TableGroundTruth:
    """Render one table and its labels; deterministic in ``spec``."""
    owner = validate_spans(spec.n_rows, spec.n_cols, spec.spans)
    rng = RandomSource(spec.seed)
    lay = _layout(spec, rng)
    row_runs, col_runs = separator_runs(owner)
    gray, _, background = _render(spec, lay, owner, row_runs, col_runs, rng)
    if not spec.distortion.is_identity:
        gray = _remap(gray, spec.distortion, background)
    tint = rng.uniform(0.92, 1.0, 3)
    rgb = gray[..., None] * tint[None, None, :]
    rgb = rgb + rng.normal(0.0, 4.0, rgb.shape)
    image = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)

    w, h = spec.width, spec.height
    scale = np.array([w, h], dtype=np.float64)
    t = np.arange(1, spec.num_points + 1, dtype=np.float64)[:, None] / spec.num_points

    def separator(p1, p2) -> GroundTruthSeparator:
        p1 = np.asarray(p1, dtype=np.float64) / scale
        p2 = np.asarray(p2, dtype=np.float64) / scale
        path = np.vstack([p1[None], (1 - t) * p1 + t * p2])
        moved = warp_points(path, spec.distortion, w, h)
        line = SingleLine.from_coords([*moved[0], *moved[-1]])
        return GroundTruthSeparator(line, LineStrip(moved[1:]))

    rows = [separator((lay.xs[a], lay.ys[k]), (lay.xs[b + 1], lay.ys[k])) for k, a, b in row_runs]
    cols = [separator((lay.xs[k], lay.ys[a]), (lay.xs[k], lay.ys[b + 1])) for k, a, b in col_runs]
    cells = cells_from_spans(spec.n_rows, spec.n_cols, spec.spans)
    return TableGroundTruth(image, rows, cols, cells, spec, spec.n_rows, spec.n_cols)


def line_mask(spec: TableSpec) -> np.ndarray:
    """Distorted mask of the drawn ruling lines (for label/pixel consistency checks)."""
    owner = validate_spans(spec.n_rows, spec.n_cols, spec.spans)
    rng = RandomSource(spec.seed)
    lay = _layout(spec, rng)
    row_runs, col_runs = separator_runs(owner)
    _, mask, _ = _render(spec, lay, owner, row_runs, col_runs, rng)
    if not spec.distortion.is_identity:
        mask = _remap(mask, spec.distortion, 0.0)
    return mask


# -- corpora -------------------------------------------------------------------

@dataclass(frozen=True)
class TableDistribution:
    min_rows: int = 1
    max_rows: int = 8
    min_cols: int = 1
    max_cols: int = 8
    spans_prob: float = 0.3
    max_spans: int = 3
    styles: tuple[Style, ...] = (Style.WIRED, Style.WIRELESS, Style.PARTIAL)
    distortion_prob: float = 0.5
    max_rotation_deg: float = 3.0
    max_warp: float = 0.01
    size: int = 320  # longer image side
    min_aspect: float = 0.7
    num_points: int = 16

    def to_dict(self) -> dict:
        d = asdict(self)
        d["styles"] = [Style(s).value for s in self.styles]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TableDistribution":
        d = dict(d)
        if "styles" in d:
            d["styles"] = tuple(Style(s) for s in d["styles"])
        return cls(**d)


def _sample_spans(n_rows: int, n_cols: int, dist: TableDistribution, rng: RandomSource) -> tuple:
    if n_rows * n_cols < 2 or rng.random() >= dist.spans_prob:
        return ()
    spans: list[Span] = []
    target = int(rng.integers(1, dist.max_spans + 1))
    for _ in range(20):
        if len(spans) >= target:
            break
        hgt = int(rng.integers(1, min(2, n_rows) + 1))
        wid = int(rng.integers(1, min(3, n_cols) + 1))
        if hgt * wid == 1:
            continue
        r0 = int(rng.integers(0, n_rows - hgt + 1))
        c0 = int(rng.integers(0, n_cols - wid + 1))
        cand = spans + [(r0, r0 + hgt - 1, c0, c0 + wid - 1)]
        try:
            validate_spans(n_rows, n_cols, cand)
        except ValueError:
            continue
        spans = cand
    return tuple(spans)


def sample_spec(dist: TableDistribution, seed: int) -> TableSpec:
    rng = RandomSource(seed)
    n_rows = int(rng.integers(dist.min_rows, dist.max_rows + 1))
    n_cols = int(rng.integers(dist.min_cols, dist.max_cols + 1))
    style = Style(dist.styles[int(rng.integers(0, len(dist.styles)))])
    spans = _sample_spans(n_rows, n_cols, dist, rng)
    distortion = Distortion()
    if rng.random() < dist.distortion_prob:
        rot = float(rng.uniform(-dist.max_rotation_deg, dist.max_rotation_deg))
        warp = float(rng.uniform(0, dist.max_warp)) if rng.random() < 0.5 else 0.0
        distortion = Distortion(round(rot, 6), round(warp, 6), float(rng.uniform(0.5, 1.5)),
                                float(rng.uniform(0, 2 * np.pi)))
    aspect = float(rng.uniform(dist.min_aspect, 1.0))
    short = int(round(dist.size * aspect))
    width, height = (dist.size, short) if rng.random() < 0.5 else (short, dist.size)
    return TableSpec(n_rows, n_cols, spans, style, distortion, seed, width, height, dist.num_points)


def split_of(index: int) -> str:
    return "eval" if index % 10 == 9 else "train"


@dataclass
class Corpus:
    samples: list[TableGroundTruth]
    manifest: dict = field(default_factory=dict)

    def split(self, name: str) -> list[TableGroundTruth]:
        return [s for i, s in enumerate(self.samples) if split_of(i) == name]


def sample_seeds(seed: int, n: int) -> list[int]:
    return [r.seed for r in RandomSource(seed).spawn(n)]


def dataset(seed: int, n: int, dist: TableDistribution = TableDistribution(), workers: int = 1) -> Corpus:
    """``n`` reproducible tables; every tenth (index 9, 19, ...) is held out.

    Samples depend only on their own seed, so ``workers > 1`` renders them in
    a process pool without changing the result.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    specs = [sample_spec(dist, s) for s in sample_seeds(seed, n)]
    if workers > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(generate, specs, chunksize=max(1, n // (4 * workers))))
    else:
        samples = [generate(spec) for spec in specs]
    manifest = {
        "seed": seed,
        "count": n,
        "distribution": dist.to_dict(),
        "samples": [{"index": i, "split": split_of(i), "file": sample_name(i), "spec": spec.to_dict()}
                    for i, spec in enumerate(specs)],
    }
    return Corpus(samples, manifest)


def sample_name(index: int) -> str:
    return f"{index:05d}"


def write_corpus(corpus: Corpus, out: str | Path) -> Path:
    """Write ``NNNNN.png`` + ``NNNNN.json`` per sample and ``manifest.json``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for i, sample in enumerate(corpus.samples):
        name = sample_name(i)
        Image.fromarray(sample.image, "RGB").save(out / f"{name}.png", optimize=False)
        doc = sample.to_document(f"{name}.png")
        (out / f"{name}.json").write_text(json.dumps(doc, indent=1) + "\n")
    (out / "manifest.json").write_text(json.dumps(corpus.manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_document(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    for key in ("width", "height", "rows", "cols"):
        if key not in doc:
            raise ValueError(f"{path}: missing '{key}'")
    return doc


def document_separators(doc: dict, axis: str) -> list[GroundTruthSeparator]:
    return [GroundTruthSeparator(SingleLine.from_coords(s["line"]), LineStrip(np.asarray(s["strip"])))
            for s in doc[axis + "s"]]


def load_sample(json_path: str | Path) -> tuple[np.ndarray, dict]:
    json_path = Path(json_path)
    doc = load_document(json_path)
    image = np.asarray(Image.open(json_path.parent / doc["image"]).convert("RGB"))
    return image, doc
