"""Training loop: random multi-scale resize, per-layer matched losses, cosine-annealed Adam."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .criterion import AxisTargets, CriterionConfig, batch_loss, make_targets, selectors_for
from .evaluation import document_files
from .geometry import Axis
from .losses import ClassificationScope, LossConfig
from .matching import ClassTermSign, MatchConfig
from .model import SepFormer
from .numerics import Adam, NonFiniteError, RandomSource, cosine_lr
from .preprocess import Frame, batch_images
from .synthdata import Corpus, TableGroundTruth, load_sample, sample_name, split_of

log = logging.getLogger(__name__)

LOSS_KEYS = ("cls", "angle", "line", "linestrip", "total")


class TrainingDivergedError(FloatingPointError):
    """The objective became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    lr: float = 3e-5
    min_lr: float = 0.0
    schedule: str = "cosine"  # or "constant"
    resize_set: tuple[int, ...] = (224, 256, 288)
    batch_size: int = 1
    seed: int = 0
    checkpoint_every: int = 0  # epochs between intermediate checkpoints; 0 keeps only the final one
    grad_clip: float = 0.0  # max global gradient norm; 0 disables clipping

    def __post_init__(self):
        object.__setattr__(self, "resize_set", tuple(int(v) for v in self.resize_set))
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or self.min_lr < 0:
            raise ValueError("learning rates must be positive")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not self.resize_set or min(self.resize_set) < 32:
            raise ValueError("resize_set needs sizes >= 32")

    def lr_at(self, step: int, total_steps: int) -> float:
        if self.schedule == "constant":
            return self.lr
        return cosine_lr(step, total_steps, self.lr, self.min_lr)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resize_set"] = list(self.resize_set)
        return d


def criterion_to_dict(cfg: CriterionConfig) -> dict:
    m, l = asdict(cfg.match), asdict(cfg.loss)
    m["class_term_sign"] = cfg.match.class_term_sign.value
    l["classification_scope"] = cfg.loss.classification_scope.value
    return {"match": m, "loss": l, "supervise_proposals": cfg.supervise_proposals}


def criterion_from_dict(d: dict) -> CriterionConfig:
    m = dict(d.get("match", {}))
    l = dict(d.get("loss", {}))
    if "class_term_sign" in m:
        m["class_term_sign"] = ClassTermSign(m["class_term_sign"])
    if "classification_scope" in l:
        l["classification_scope"] = ClassificationScope(l["classification_scope"])
    return CriterionConfig(MatchConfig(**m), LossConfig(**l), d.get("supervise_proposals", True))


@dataclass
class TrainingSample:
    image: np.ndarray  # H×W×3 uint8
    row_lines: np.ndarray  # N×4 normalized
    row_strips: np.ndarray  # N×P×2
    col_lines: np.ndarray
    col_strips: np.ndarray
    name: str = ""

    def targets(self, frame: Frame, dtype: torch.dtype) -> dict[Axis, AxisTargets]:
        out = {}
        for axis, lines, strips in ((Axis.ROW, self.row_lines, self.row_strips),
                                    (Axis.COL, self.col_lines, self.col_strips)):
            out[axis] = make_targets(frame.to_model(lines.reshape(-1, 2, 2)).reshape(-1, 4),
                                     frame.to_model(strips), axis, dtype)
        return out


def _arrays(seps, p: int) -> tuple[np.ndarray, np.ndarray]:
    if not seps:
        return np.zeros((0, 4)), np.zeros((0, p, 2))
    return np.stack([s.line.coords() for s in seps]), np.stack([s.strip.points for s in seps])


def sample_from_ground_truth(gt: TableGroundTruth, name: str = "") -> TrainingSample:
    p = gt.spec.num_points
    rl, rs = _arrays(gt.rows, p)
    cl, cs = _arrays(gt.cols, p)
    return TrainingSample(gt.image, rl, rs, cl, cs, name)


def sample_from_document(image: np.ndarray, doc: dict, name: str = "") -> TrainingSample:
    def arrays(key):
        seps = doc[key]
        if not seps:
            return np.zeros((0, 4)), np.zeros((0, 0, 2))
        return (np.array([s["line"] for s in seps], dtype=np.float64),
                np.array([s["strip"] for s in seps], dtype=np.float64))
    rl, rs = arrays("rows")
    cl, cs = arrays("cols")
    return TrainingSample(image, rl, rs, cl, cs, name)


def corpus_samples(corpus: Corpus, split: str = "train") -> list[TrainingSample]:
    return [sample_from_ground_truth(s, sample_name(i)) for i, s in enumerate(corpus.samples)
            if split_of(i) == split]


def directory_samples(path: str | Path, split: str | None = "train") -> list[TrainingSample]:
    """Samples of a generated directory; the manifest decides the split when present."""
    path = Path(path)
    manifest = path / "manifest.json"
    if manifest.exists():
        entries = json.loads(manifest.read_text())["samples"]
        names = [e["file"] for e in entries if split is None or e["split"] == split]
    else:
        names = sorted(document_files(path))
    if not names:
        raise FileNotFoundError(f"no samples in {path}")
    out = []
    for name in names:
        image, doc = load_sample(path / f"{name}.json")
        out.append(sample_from_document(image, doc, name))
    return out


@dataclass
class TrainResult:
    model: SepFormer
    history: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None


def train(model: SepFormer, samples: list[TrainingSample], cfg: TrainConfig = TrainConfig(),
          criterion: CriterionConfig = CriterionConfig(), out_dir: str | Path | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Optimize ``model`` in place; returns the per-epoch loss history.

    With ``out_dir`` the run writes ``train_config.json``, ``train_log.jsonl``
    (one line per epoch), optional ``checkpoint_eNNN.sepf`` files and the
    final ``model.sepf`` with its ``model.json`` configuration.
    """
    if not samples:
        raise ValueError("no training samples")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        resolved = {"train": cfg.to_dict(), "criterion": criterion_to_dict(criterion),
                    "model": model.cfg.to_dict(), "samples": len(samples)}
        (out / "train_config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
        (out / "train_log.jsonl").write_text("")
    rng = RandomSource(cfg.seed)
    dtype = next(model.parameters()).dtype
    opt = Adam(model.parameters(), lr=cfg.lr)
    steps_per_epoch = (len(samples) + cfg.batch_size - 1) // cfg.batch_size
    total_steps = steps_per_epoch * cfg.epochs
    history = []
    step = 0
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(samples))
        sums = dict.fromkeys(LOSS_KEYS, 0.0)
        started = time.perf_counter()
        for b in range(steps_per_epoch):
            batch = [samples[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            longer = int(rng.choice(cfg.resize_set))
            images, frames = batch_images([s.image for s in batch], longer)
            images = images.to(dtype)
            targets = [s.targets(f, dtype) for s, f in zip(batch, frames)]
            where = f"(samples {[s.name for s in batch]}, resize {longer}, lr {opt.lr:.3g})"
            try:
                outputs = model(images, selectors_for(targets, criterion))
                loss = batch_loss(outputs, targets, criterion)
            except NonFiniteError as err:
                raise TrainingDivergedError(f"epoch {epoch} step {step}: {err} {where}") from err
            if not bool(torch.isfinite(loss.grand_total)):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} step {step}: {loss.as_floats()} {where}")
            opt.zero_grad()
            loss.grand_total.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(opt.params, cfg.grad_clip)
            opt.lr = cfg.lr_at(step, total_steps)
            opt.step()
            step += 1
            vals = loss.as_floats()
            for k in ("cls", "angle", "line", "linestrip"):
                sums[k] += vals[k]
            sums["total"] += vals["grand_total"]
        record = {"epoch": epoch, "steps": step, "lr": cfg.lr_at(step, total_steps)}
        record.update({k: sums[k] / steps_per_epoch for k in LOSS_KEYS})
        history.append(record)
        log.info("epoch %d/%d total %.4f (%.1fs)", epoch, cfg.epochs, record["total"],
                 time.perf_counter() - started)
        if out is not None:
            with open(out / "train_log.jsonl", "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0 and epoch < cfg.epochs:
                model.save(out / f"checkpoint_e{epoch:03d}.sepf")
        if on_epoch is not None:
            on_epoch(record)
    ckpt = None
    if out is not None:
        ckpt = out / "model.sepf"
        model.save(ckpt)
    model.eval()
    return TrainResult(model, history, ckpt)


def read_log(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
