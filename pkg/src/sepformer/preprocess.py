"""Aspect-preserving resize, stride padding and the coordinate frames they induce."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from .model.sepformer import normalize_image
from .numerics import Tensor

PAD_VALUE = 128
STRIDE = 32


@dataclass(frozen=True)
class Frame:
    """Maps normalized source-image coordinates into the padded network input."""

    width: int
    height: int
    resized_width: int
    resized_height: int
    padded_width: int
    padded_height: int

    @property
    def scale(self) -> np.ndarray:
        return np.array([self.resized_width / self.padded_width, self.resized_height / self.padded_height])

    def to_model(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts.reshape(-1, 2) * self.scale).reshape(pts.shape)

    def from_model(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts.reshape(-1, 2) / self.scale).reshape(pts.shape)


def round_up(n: int, multiple: int = STRIDE) -> int:
    return int(math.ceil(n / multiple) * multiple)


def resized_shape(width: int, height: int, longer: int) -> tuple[int, int]:
    s = longer / max(width, height)
    return max(1, int(round(width * s))), max(1, int(round(height * s)))


def resize_and_pad(image: np.ndarray, longer: int, pad_to: tuple[int, int] | None = None
                   ) -> tuple[np.ndarray, Frame]:
    """uint8 ``H×W×3`` → resized copy padded right/bottom with mid-gray.

    ``pad_to`` (width, height) forces a common canvas, e.g. for batching.
    """
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an H×W×3 uint8 image")
    h, w = image.shape[:2]
    rw, rh = resized_shape(w, h, longer)
    resized = np.asarray(Image.fromarray(image).resize((rw, rh), Image.BILINEAR))
    pw, ph = pad_to if pad_to is not None else (round_up(rw), round_up(rh))
    if pw < rw or ph < rh or pw % STRIDE or ph % STRIDE:
        raise ValueError(f"cannot pad {rw}×{rh} to {pw}×{ph}")
    canvas = np.full((ph, pw, 3), PAD_VALUE, dtype=np.uint8)
    canvas[:rh, :rw] = resized
    return canvas, Frame(w, h, rw, rh, pw, ph)


def batch_images(images: list[np.ndarray], longer: int) -> tuple[Tensor, list[Frame]]:
    """Network input ``B×3×H×W`` sharing one padded canvas size."""
    shapes = [resized_shape(im.shape[1], im.shape[0], longer) for im in images]
    pad = (max(round_up(w) for w, _ in shapes), max(round_up(h) for _, h in shapes))
    out, frames = [], []
    for im in images:
        canvas, frame = resize_and_pad(im, longer, pad)
        out.append(normalize_image(canvas))
        frames.append(frame)
    return torch.stack(out), frames
