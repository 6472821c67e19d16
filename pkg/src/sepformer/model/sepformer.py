"""The full network: backbone, hybrid encoder and one decoder per axis."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..geometry import Axis, LineStrip, ScoredSeparator, SingleLine
from ..numerics import Tensor, load_checkpoint, save_checkpoint
from .backbone import Backbone
from .config import ModelConfig
from .decoder import AxisDecoder, AxisOutput, FineSelector
from .encoder import EncoderMemory, HybridEncoder

PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


def normalize_image(image) -> Tensor:
    """uint8 ``H×W×3`` (or float ``3×H×W`` in [0, 1]) to the network's input scale."""
    if isinstance(image, np.ndarray) and image.dtype == np.uint8:
        t = torch.from_numpy(image.astype(np.float32) / 255.0).permute(2, 0, 1)
    else:
        t = torch.as_tensor(image)
    t = t.to(torch.get_default_dtype())
    return (t - PIXEL_MEAN) / PIXEL_STD


def threshold_selector(tau: float) -> FineSelector:
    def select(score_logits: Tensor, lines: Tensor) -> Tensor:
        return torch.nonzero(torch.sigmoid(score_logits) >= tau).flatten()
    return select


class SepFormer(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg.stem_width, cfg.backbone_widths)
        self.encoder = HybridEncoder(cfg.backbone_widths, cfg.channels, cfg.heads,
                                     cfg.ffn_dim, cfg.encoder_layers)
        self.row_decoder = AxisDecoder(Axis.ROW, cfg)
        self.col_decoder = AxisDecoder(Axis.COL, cfg)

    def decoder(self, axis: Axis) -> AxisDecoder:
        return self.row_decoder if Axis(axis) == Axis.ROW else self.col_decoder

    def encode(self, images: Tensor) -> list[EncoderMemory]:
        if images.dim() == 3:
            images = images[None]
        return self.encoder(self.backbone(images))

    def forward(self, images: Tensor, selectors: list[dict[Axis, FineSelector]] | None = None
                ) -> list[dict[Axis, AxisOutput]]:
        """Run both decoders on every image of the batch.

        ``selectors[b][axis]`` chooses which queries of image ``b`` are refined
        into line strips; by default the configured score thresholds apply.
        """
        memories = self.encode(images)
        outputs = []
        for b, memory in enumerate(memories):
            per_axis = {}
            for axis in (Axis.ROW, Axis.COL):
                if selectors is not None:
                    sel = selectors[b][axis]
                else:
                    sel = threshold_selector(self.cfg.tau_row if axis == Axis.ROW else self.cfg.tau_col)
                per_axis[axis] = self.decoder(axis)(memory, sel)
            outputs.append(per_axis)
        return outputs

    @torch.no_grad()
    def predict(self, image: Tensor, tau_row: float | None = None,
                tau_col: float | None = None) -> dict:
        """Inference on one image: final-layer separators for both axes.

        Every query is returned (pre-threshold); strips are attached only to
        separators whose score passed the threshold.
        """
        taus = {Axis.ROW: self.cfg.tau_row if tau_row is None else tau_row,
                Axis.COL: self.cfg.tau_col if tau_col is None else tau_col}
        sel = {axis: threshold_selector(t) for axis, t in taus.items()}
        was_training = self.training
        self.eval()
        try:
            out = self.forward(image if image.dim() == 4 else image[None], [sel])[0]
        finally:
            self.train(was_training)
        result = {"aux": out}
        for axis, axis_out in out.items():
            result[axis.value] = to_separators(axis_out, taus[axis])
        return result

    def state_tensors(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.state_dict().items()}

    def save(self, path: str | Path) -> None:
        path = Path(path)
        save_checkpoint(path, self.state_tensors())
        self.cfg.save(config_path(path))

    @classmethod
    def load(cls, path: str | Path, cfg: ModelConfig | None = None) -> "SepFormer":
        path = Path(path)
        cfg = cfg or ModelConfig.load(config_path(path))
        model = cls(cfg)
        state = load_checkpoint(path)
        own = model.state_dict()
        model.load_state_dict({k: v.to(own[k].dtype) for k, v in state.items()})
        return model


def config_path(checkpoint: Path) -> Path:
    return checkpoint.with_suffix(".json")


def to_separators(out: AxisOutput, tau: float) -> list[ScoredSeparator]:
    final = out.final
    scores = torch.sigmoid(final.score_logits).double().numpy()
    lines = final.lines.double().numpy()
    strips = {}
    if final.strips is not None:
        index = range(len(lines)) if final.query_index is None else final.query_index.tolist()
        for row, q in enumerate(index):
            if scores[q] >= tau:
                strips[q] = final.strips[row].double().numpy()
    seps = []
    for q in range(len(lines)):
        strip = LineStrip(strips[q]) if q in strips else None
        seps.append(ScoredSeparator(float(scores[q]), SingleLine.from_coords(lines[q]), out.axis, strip))
    return seps


def build_model(cfg: ModelConfig = ModelConfig(), seed: int = 0,
                dtype: torch.dtype = torch.float32) -> SepFormer:
    """Deterministically initialized model."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = SepFormer(cfg)
    return model.to(dtype)
