"""Finite-difference check of the training objective, in double precision.

Builds a tiny model with exact reference gradients, runs it on a random
image against two row and one column separator, and compares the autograd
derivative of the full loss with a central difference along a random
direction for each parameter tensor.

    python demos/gradient_check.py
"""

import torch

from sepformer.criterion import CriterionConfig, batch_loss, make_targets, selectors_for
from sepformer.geometry import Axis, SingleLine, sample_points
from sepformer.model import ModelConfig, build_model

cfg = ModelConfig(channels=8, heads=2, k_row=3, k_col=3, ffn_dim=16, stem_width=4,
                  backbone_widths=(8, 8, 8), num_points=4, detach_references=False)
model = build_model(cfg, seed=0, dtype=torch.float64)
g = torch.Generator().manual_seed(9)
with torch.no_grad():
    # step references off the pixel-centre lattice where bilinear sampling has kinks
    for p in model.parameters():
        p.add_(0.02 * torch.randn(p.shape, generator=g, dtype=p.dtype))

image = torch.rand(1, 3, 32, 32, generator=torch.Generator().manual_seed(1), dtype=torch.float64)


def targets_for(coords, axis):
    strips = [sample_points(SingleLine.from_coords(c), cfg.num_points).points for c in coords]
    return make_targets(coords, strips, axis, torch.float64)


targets = [{Axis.ROW: targets_for([[0.09, 0.31, 0.91, 0.36], [0.07, 0.69, 0.92, 0.71]], Axis.ROW),
            Axis.COL: targets_for([[0.53, 0.11, 0.46, 0.93]], Axis.COL)}]
crit = CriterionConfig()
selectors = selectors_for(targets, crit)


def objective():
    return batch_loss(model(image, selectors), targets, crit).grand_total


model.zero_grad()
loss = objective()
loss.backward()
print(f"loss {float(loss.detach()):.6f}")

rng = torch.Generator().manual_seed(0)
h, worst = 1e-6, 0.0
with torch.no_grad():
    for name, p in model.named_parameters():
        v = torch.randn(p.shape, generator=rng, dtype=p.dtype)
        analytic = float((p.grad * v).sum()) if p.grad is not None else 0.0
        p.add_(h * v)
        up = float(objective())
        p.sub_(2 * h * v)
        down = float(objective())
        p.add_(h * v)
        numeric = (up - down) / (2 * h)
        # the floor keeps near-zero derivatives from turning roundoff into large ratios
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-5)
        worst = max(worst, err)
        if err > 1e-3:
            print(f"  {name}: analytic {analytic:.6e} numeric {numeric:.6e}")
print(f"worst relative error over {len(list(model.parameters()))} parameter tensors: {worst:.2e}")
