from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path


class DecoderStages(str, enum.Enum):
    TWO_STAGE = "two-stage"  # 3 coarse single-line layers, then 3 fine line-strip layers
    ONE_STAGE_3 = "one-stage-3"  # strips regressed directly, 3 layers
    ONE_STAGE_6 = "one-stage-6"  # strips regressed directly, 6 layers

    @property
    def unified_layers(self) -> int:
        return {DecoderStages.ONE_STAGE_3: 3, DecoderStages.ONE_STAGE_6: 6}.get(self, 0)


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 64
    heads: int = 4
    deform_points: int = 4
    encoder_layers: int = 1
    coarse_layers: int = 3
    fine_layers: int = 3
    k_row: int = 40
    k_col: int = 40
    num_points: int = 16
    tau_row: float = 0.95
    tau_col: float = 0.95
    strides: tuple[int, int, int] = (8, 16, 32)
    stem_width: int = 16
    backbone_widths: tuple[int, int, int] = (32, 64, 128)
    ffn_dim: int = 128
    proposal_scale: float = 0.05
    decoder_stages: DecoderStages = DecoderStages.TWO_STAGE
    # False lets gradients flow through every refined reference (exact-gradient checks)
    detach_references: bool = True

    def __post_init__(self):
        counts = (self.channels, self.heads, self.deform_points, self.encoder_layers,
                  self.coarse_layers, self.fine_layers, self.k_row, self.k_col,
                  self.num_points, self.stem_width, self.ffn_dim, *self.backbone_widths)
        if min(counts) < 1:
            raise ValueError("all counts must be >= 1")
        if self.num_points < 2:
            raise ValueError("num_points must be >= 2")
        if not (0 < self.tau_row < 1 and 0 < self.tau_col < 1):
            raise ValueError("thresholds must lie in (0, 1)")
        if self.channels % self.heads:
            raise ValueError("channels must be divisible by heads")
        if self.channels % 4:
            raise ValueError("channels must be divisible by 4 for the sine embedding")
        if tuple(self.strides) != (8, 16, 32):
            raise ValueError("the backbone produces strides 8, 16 and 32 only")
        object.__setattr__(self, "decoder_stages", DecoderStages(self.decoder_stages))
        object.__setattr__(self, "strides", tuple(self.strides))
        object.__setattr__(self, "backbone_widths", tuple(self.backbone_widths))

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        base = cls(channels=256, heads=8, k_row=300, k_col=300, ffn_dim=1024,
                   stem_width=64, backbone_widths=(128, 256, 512))
        return replace(base, **overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decoder_stages"] = self.decoder_stages.value
        d["strides"] = list(self.strides)
        d["backbone_widths"] = list(self.backbone_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in d.items() if k in known}
        for key in ("strides", "backbone_widths"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
