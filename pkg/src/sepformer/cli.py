"""Command line: generate | train | infer | eval | render | bench."""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

log = logging.getLogger("sepformer")

DESK_RESIZE_SET = (224, 256, 288)
FULL_RESIZE_SET = (864, 896, 928, 960)
DESK_INFER_RESIZE = 256
FULL_INFER_RESIZE = 896
IMAGE_SUFFIXES = (".png", ".ppm", ".jpg", ".jpeg")


def worker_count() -> int:
    raw = os.environ.get("SEPFORMER_THREADS", "")
    try:
        n = int(raw) if raw else 1
    except ValueError:
        raise SystemExit(f"SEPFORMER_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fail(errors: list[dict]) -> int:
    print(json.dumps({"errors": errors}, sort_keys=True), file=sys.stderr)
    return 1


# -- generate ------------------------------------------------------------------

def cmd_generate(args) -> int:
    from .synthdata import Style, TableDistribution, dataset, write_corpus
    styles = tuple(Style(s) for s in args.styles.split(","))
    dist = TableDistribution(min_rows=1, max_rows=args.max_rows, min_cols=1, max_cols=args.max_cols,
                             spans_prob=args.spans_prob, styles=styles, distortion_prob=args.distortion,
                             size=args.size)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        corpus = dataset(args.seed, args.count, dist, workers=worker_count())
        write_corpus(corpus, out)
        _write_json(out / "run_config.json", {"command": "generate", "seed": args.seed, "count": args.count,
                                              "distribution": dist.to_dict()})
    except OSError as err:
        return _fail([{"error": "unwritable-path", "path": str(out), "message": str(err)}])
    print(f"wrote {args.count} samples to {out}")
    return 0


# -- train ----------------------------------------------------------------------

DECODER_CHOICES = ("two-stage", "one-stage-3", "one-stage-6")


def parse_ablation(tokens: list[str]) -> dict:
    """Decoder staging plus ``angle``/``ls-match`` switches.

    Switches accept ``angle off``, ``angle=off`` or ``angle-off``.
    """
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i].lower()
        if tok in DECODER_CHOICES:
            out["decoder"] = tok
            i += 1
            continue
        for name in ("angle", "ls-match"):
            if tok == name and i + 1 < len(tokens) and tokens[i + 1].lower() in ("on", "off"):
                out[name] = tokens[i + 1].lower() == "on"
                i += 2
                break
            if tok in (f"{name}=on", f"{name}-on", f"{name}=off", f"{name}-off"):
                out[name] = tok.endswith("on")
                i += 1
                break
        else:
            raise SystemExit(f"unknown ablation token {tokens[i]!r}")
    return out


def resolve_model_config(args):
    from .model import DecoderStages, ModelConfig
    if args.config:
        cfg = ModelConfig.load(args.config)
    elif args.paper_scale:
        cfg = ModelConfig.full_scale()
    else:
        cfg = ModelConfig()
    overrides = {}
    if getattr(args, "channels", None):
        overrides["channels"] = args.channels
    if getattr(args, "k", None):
        overrides["k_row"] = overrides["k_col"] = args.k
    ablation = parse_ablation(args.ablation or [])
    if "decoder" in ablation:
        overrides["decoder_stages"] = DecoderStages(ablation["decoder"])
    return (replace(cfg, **overrides) if overrides else cfg), ablation


def cmd_train(args) -> int:
    from .criterion import CriterionConfig
    from .losses import LossConfig
    from .matching import MatchConfig
    from .model import build_model
    from .training import TrainConfig, TrainingDivergedError, directory_samples, train
    model_cfg, ablation = resolve_model_config(args)
    loss_cfg = LossConfig(angle_loss_enabled=ablation.get("angle", True))
    match_cfg = MatchConfig(use_line_strip=ablation.get("ls-match", False))
    resize = tuple(int(v) for v in args.resize_set.split(",")) if args.resize_set else (
        FULL_RESIZE_SET if args.paper_scale else DESK_RESIZE_SET)
    train_cfg = TrainConfig(epochs=args.epochs, lr=args.lr, schedule=args.schedule, resize_set=resize,
                            batch_size=args.batch_size, seed=args.seed, checkpoint_every=args.checkpoint_every)
    try:
        samples = directory_samples(args.data, split="train")
    except FileNotFoundError as err:
        return _fail([{"error": "missing-dataset", "path": args.data, "message": str(err)}])
    if args.limit:
        samples = samples[:args.limit]
    model = build_model(model_cfg, seed=args.seed)
    out = Path(args.out)
    try:
        result = train(model, samples, train_cfg, CriterionConfig(match_cfg, loss_cfg), out_dir=out)
    except TrainingDivergedError as err:
        return _fail([{"error": "diverged", "message": str(err)}])
    last = result.history[-1]
    print(f"trained {train_cfg.epochs} epochs; final total loss {last['total']:.4f}; checkpoint {result.checkpoint}")
    return 0


# -- infer ----------------------------------------------------------------------

def _image_paths(args) -> list[Path]:
    if args.image:
        return [Path(args.image)]
    paths = sorted(p for p in Path(args.dir).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise FileNotFoundError(f"no images in {args.dir}")
    return paths


def _load_image(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def cmd_infer(args) -> int:
    from .inference import infer_image
    from .model import SepFormer
    try:
        model = SepFormer.load(args.checkpoint)
    except (OSError, ValueError) as err:
        return _fail([{"error": "bad-checkpoint", "path": args.checkpoint, "message": str(err)}])
    model.eval()
    resize = args.resize or (FULL_INFER_RESIZE if args.paper_scale else DESK_INFER_RESIZE)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "run_config.json", {"command": "infer", "checkpoint": str(args.checkpoint),
                                          "tau_row": args.tau_row, "tau_col": args.tau_col, "resize": resize,
                                          "model": model.cfg.to_dict()})
    errors = []
    for path in _image_paths(args):
        try:
            image = _load_image(path)
        except OSError as err:
            errors.append({"image": str(path), "error": "unreadable-image", "message": str(err)})
            continue
        result = infer_image(model, image, args.tau_row, args.tau_col, resize)
        doc = result.document(path.name)
        _write_json(out / f"{path.stem}.json", doc)
        if result.html is not None:
            (out / f"{path.stem}.html").write_text(result.html + "\n")
        if result.error is not None:
            errors.append({"image": str(path), **result.error})
    if errors:
        _write_json(out / "errors.json", errors)
        return _fail(errors)
    return 0


# -- eval / render / bench ----------------------------------------------------------

def cmd_eval(args) -> int:
    from .evaluation import evaluate_directories
    try:
        report = evaluate_directories(args.pred, args.gt, args.iou, args.tol)
    except ValueError as err:
        return _fail([{"error": "file-mismatch", "message": str(err)}])
    report["config"] = {"command": "eval", "pred": str(args.pred), "gt": str(args.gt)}
    out = Path(args.out) if args.out else Path(args.pred) / "report.json"
    _write_json(out, report)
    agg = report["aggregate"]
    print(json.dumps({"adjacency_f1": agg.get("adjacency", {}).get("f1"),
                      "separator_f1": agg.get("separators", {}).get("f1"),
                      "teds_struct": agg["teds_struct"]}, sort_keys=True))
    return 0


def cmd_render(args) -> int:
    from .render import render_svg
    doc = json.loads(Path(args.separators).read_text())
    image = _load_image(Path(args.image)) if args.image else None
    if image is not None and (image.shape[1], image.shape[0]) != (doc["width"], doc["height"]):
        return _fail([{"error": "size-mismatch", "image": args.image,
                       "message": f"image is {image.shape[1]}×{image.shape[0]}, separators are for "
                                  f"{doc['width']}×{doc['height']}"}])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_svg(image, doc))
    return 0


def cmd_bench(args) -> int:
    from .model import SepFormer
    from .preprocess import batch_images
    model = SepFormer.load(args.checkpoint)
    model.eval()
    resize = args.resize or (FULL_INFER_RESIZE if args.paper_scale else DESK_INFER_RESIZE)
    images = [_load_image(p) for p in _image_paths(args)]
    inputs = [batch_images([im], resize)[0][0] for im in images]
    with torch.no_grad():
        model.predict(inputs[0])  # warm-up
        passes = []
        for _ in range(args.repeat):
            start = time.perf_counter()
            for x in inputs:
                model.predict(x)
            elapsed = time.perf_counter() - start
            passes.append(len(inputs) / elapsed)
    report = {"images": len(inputs), "repeat": args.repeat, "resize": resize, "threads": torch.get_num_threads(),
              "fps_per_pass": passes, "fps_mean": statistics.fmean(passes), "fps_median": statistics.median(passes)}
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sepformer", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write synthetic tables with ground truth")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--out", required=True)
    g.add_argument("--spans-prob", type=float, default=0.3)
    g.add_argument("--distortion", type=float, default=0.5, help="fraction of rotated/warped tables")
    g.add_argument("--styles", default="wired,wireless,partial-borders")
    g.add_argument("--max-rows", type=int, default=8)
    g.add_argument("--max-cols", type=int, default=8)
    g.add_argument("--size", type=int, default=320, help="longer image side in pixels")
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train a model on a generated directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=60)
    t.add_argument("--lr", type=float, default=3e-5)
    t.add_argument("--schedule", choices=("cosine", "constant"), default="cosine")
    t.add_argument("--resize-set", default=None, help="comma-separated longer-side sizes")
    t.add_argument("--batch-size", type=int, default=1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--config", default=None, help="model configuration JSON")
    t.add_argument("--channels", type=int, default=None)
    t.add_argument("--k", type=int, default=None, help="queries per axis")
    t.add_argument("--limit", type=int, default=0, help="use only the first N training samples")
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--ablation", nargs="+", default=None,
                   help="two-stage|one-stage-3|one-stage-6, angle on|off, ls-match on|off")
    t.add_argument("--paper-scale", action="store_true", help="full-size model and resize set")
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("infer", help="predict separators and structure")
    i.add_argument("--checkpoint", required=True)
    src = i.add_mutually_exclusive_group(required=True)
    src.add_argument("--image")
    src.add_argument("--dir")
    i.add_argument("--tau-row", type=float, default=0.95)
    i.add_argument("--tau-col", type=float, default=0.95)
    i.add_argument("--resize", type=int, default=None)
    i.add_argument("--out", required=True)
    i.add_argument("--paper-scale", action="store_true")
    i.set_defaults(fn=cmd_infer)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--iou", type=float, default=0.5)
    e.add_argument("--tol", type=float, default=0.02, help="endpoint tolerance for separator detection")
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("render", help="SVG overlay of a separator document")
    r.add_argument("--image", default=None)
    r.add_argument("--separators", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_render)

    b = sub.add_parser("bench", help="inference throughput")
    b.add_argument("--checkpoint", required=True)
    bsrc = b.add_mutually_exclusive_group(required=True)
    bsrc.add_argument("--dir")
    bsrc.add_argument("--image")
    b.add_argument("--repeat", type=int, default=3)
    b.add_argument("--resize", type=int, default=None)
    b.add_argument("--out", default=None)
    b.add_argument("--paper-scale", action="store_true")
    b.set_defaults(fn=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(worker_count())
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
