"""Train a small model on synthetic tables, then predict and score held-out ones.

This is a short smoke run (a few minutes on one core). Expect the loss to
fall and the structure scores to stay low; the full desk-scale run lives in
the acceptance tests.

    python demos/train_and_infer.py [out_dir] [epochs]
"""

import json
import logging
import sys
from pathlib import Path

import torch

from sepformer.evaluation import evaluate_documents
from sepformer.inference import infer_image, predict_separators
from sepformer.model import ModelConfig, build_model
from sepformer.render import render_svg
from sepformer.synthdata import Style, TableDistribution, dataset, sample_name, split_of
from sepformer.training import TrainConfig, corpus_samples, train

logging.basicConfig(level=logging.INFO, format="%(message)s")
torch.set_num_threads(1)
out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/train")
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 30

corpus = dataset(seed=3, n=40, dist=TableDistribution(max_rows=5, max_cols=5, styles=(Style.WIRED,), size=256))
samples = corpus_samples(corpus)
model = build_model(ModelConfig(channels=32, k_row=20, k_col=20), seed=0)
print(f"{len(samples)} training tables, {sum(p.numel() for p in model.parameters())} parameters")

result = train(model, samples, TrainConfig(epochs=epochs, lr=3e-4, resize_set=(224, 256)), out_dir=out)
first, last = result.history[0]["total"], result.history[-1]["total"]
print(f"loss {first:.3f} -> {last:.3f} ({100 * (1 - last / first):.0f}% drop)")

pairs = []
for i, gt in enumerate(corpus.samples):
    if split_of(i) != "eval":
        continue
    # a lower threshold than the default keeps a briefly trained model's separators visible
    res = infer_image(result.model, gt.image, tau_row=0.5, tau_col=0.5)
    doc = res.document(f"{sample_name(i)}.png")
    (out / f"{sample_name(i)}.svg").write_text(render_svg(gt.image, doc))
    status = res.error["error"] if res.error else f"{res.grid.n_rows}x{res.grid.n_cols} grid"
    # how many queries are confident, next to how many separators the table really has
    rows, cols, _ = predict_separators(result.model, gt.image, 0.0, 0.0)
    top = sorted((s.score for s in rows), reverse=True)[:len(gt.rows)]
    print(f"held-out {sample_name(i)}: {len(res.rows)} rows, {len(res.cols)} cols kept -> {status} "
          f"(truth {gt.n_rows}x{gt.n_cols}); top row scores {[round(v, 2) for v in top]}")
    pairs.append((sample_name(i), doc, gt.to_document("")))

agg = evaluate_documents(pairs)["aggregate"]
print(json.dumps({"separator_f1": agg["separators"]["f1"], "adjacency_f1": agg["adjacency"]["f1"],
                  "teds_struct": agg["teds_struct"]}, indent=2))
print(f"checkpoint {result.checkpoint}; overlays in {out}")
