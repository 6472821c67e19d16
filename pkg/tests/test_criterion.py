import numpy as np
import pytest
import torch

from sepformer.criterion import (AxisTargets, CriterionConfig, axis_loss, batch_loss, canonical_target,
                                 make_targets, match_predictions, selectors_for, training_selector)
from sepformer.geometry import Axis, SingleLine, sample_points
from sepformer.losses import LossConfig
from sepformer.matching import MatchConfig, OverfullGroundTruthError
from sepformer.model import ModelConfig, build_model

SMALL = ModelConfig(channels=16, heads=2, k_row=6, k_col=6, ffn_dim=32, stem_width=8,
                    backbone_widths=(8, 16, 16), num_points=4)


def targets_for(coords, axis, p=4):
    return make_targets(coords, [sample_points(SingleLine.from_coords(c), p).points for c in coords], axis,
                        torch.float64)


class TestTargets:
    def test_reversal_keeps_path(self):
        line = np.array([0.9, 0.5, 0.1, 0.5])
        strip = sample_points(SingleLine.from_coords(line), 4).points
        new_line, new_strip = canonical_target(line, strip, Axis.ROW)
        assert new_line.tolist() == [0.1, 0.5, 0.9, 0.5]
        assert new_strip[-1].tolist() == [0.9, 0.5]
        # old path reversed: start + strip
        old = np.vstack([line[:2], strip])[::-1]
        np.testing.assert_array_equal(np.vstack([new_line[:2], new_strip]), old)

    def test_already_canonical_untouched(self):
        line = np.array([0.5, 0.1, 0.5, 0.9])
        strip = sample_points(SingleLine.from_coords(line), 4).points
        a, b = canonical_target(line, strip, Axis.COL)
        assert a is line and b is strip

    def test_empty(self):
        t = make_targets(np.zeros((0, 4)), np.zeros((0, 4, 2)), Axis.ROW)
        assert len(t) == 0 and t.strips.shape == (0, 4, 2)


class TestMatching:
    def test_picks_nearest(self):
        t = targets_for([[0, 0.5, 1, 0.5]], Axis.ROW)
        lines = torch.tensor([[0, 0.1, 1, 0.1], [0, 0.49, 1, 0.49]], dtype=torch.float64)
        gt, pred = match_predictions(t, torch.zeros(2, dtype=torch.float64), lines, None, MatchConfig())
        assert gt.tolist() == [0] and pred.tolist() == [1]

    def test_overfull(self):
        t = targets_for([[0, 0.2, 1, 0.2], [0, 0.5, 1, 0.5]], Axis.ROW)
        with pytest.raises(OverfullGroundTruthError):
            match_predictions(t, torch.zeros(1), torch.zeros(1, 4), None, MatchConfig())

    def test_strip_criterion_falls_back_without_strips(self):
        t = targets_for([[0, 0.5, 1, 0.5]], Axis.ROW)
        cfg = MatchConfig(use_single_line=False, use_line_strip=True)
        lines = torch.tensor([[0, 0.1, 1, 0.1], [0, 0.49, 1, 0.49]], dtype=torch.float64)
        _, pred = match_predictions(t, torch.zeros(2), lines, None, cfg)
        assert pred.tolist() == [1]

    def test_selector_in_gt_order(self):
        t = targets_for([[0, 0.8, 1, 0.8], [0, 0.2, 1, 0.2]], Axis.ROW)
        lines = torch.tensor([[0, 0.2, 1, 0.2], [0, 0.5, 1, 0.5], [0, 0.8, 1, 0.8]], dtype=torch.float64)
        sel = training_selector(t, MatchConfig())
        assert sel(torch.zeros(3), lines).tolist() == [2, 0]


@pytest.fixture(scope="module")
def setup():
    model = build_model(SMALL, seed=1, dtype=torch.float64)
    g = torch.Generator().manual_seed(0)
    x = torch.rand(1, 3, 64, 64, generator=g, dtype=torch.float64)
    targets = [{Axis.ROW: targets_for([[0.05, 0.3, 0.95, 0.3], [0.05, 0.7, 0.95, 0.72]], Axis.ROW),
                Axis.COL: targets_for([[0.5, 0.05, 0.5, 0.95]], Axis.COL)}]
    return model, x, targets


class TestAxisLoss:
    def test_finite_and_all_terms(self, setup):
        model, x, targets = setup
        cfg = CriterionConfig()
        out = model(x, selectors_for(targets, cfg))
        loss = batch_loss(out, targets, cfg)
        for v in loss.as_floats().values():
            assert np.isfinite(v)
        assert loss.linestrip.item() > 0 and loss.line.item() > 0
        assert loss.grand_total.item() == pytest.approx(
            loss.cls.item() + loss.angle.item() + 3 * loss.line.item() + loss.linestrip.item(), abs=1e-9)

    def test_angle_off_zeroes_column(self, setup):
        model, x, targets = setup
        cfg = CriterionConfig(loss=LossConfig(angle_loss_enabled=False))
        loss = batch_loss(model(x, selectors_for(targets, cfg)), targets, cfg)
        assert loss.angle.item() == 0

    def test_requires_training_selector(self, setup):
        model, x, targets = setup
        everything = lambda s, l: torch.arange(len(s))
        out = model(x, [{Axis.ROW: everything, Axis.COL: everything}])
        with pytest.raises(ValueError):
            axis_loss(out[0][Axis.ROW], targets[0][Axis.ROW])

    def test_without_deep_supervision_differs(self, setup):
        model, x, targets = setup
        full = CriterionConfig()
        last = CriterionConfig(loss=LossConfig(deep_supervision=False))
        a = batch_loss(model(x, selectors_for(targets, full)), targets, full).grand_total.item()
        b = batch_loss(model(x, selectors_for(targets, last)), targets, last).grand_total.item()
        assert np.isfinite(b) and a != b

    def test_line_strip_matching_runs(self, setup):
        model, x, targets = setup
        cfg = CriterionConfig(match=MatchConfig(use_line_strip=True))
        loss = batch_loss(model(x, selectors_for(targets, cfg)), targets, cfg)
        assert np.isfinite(loss.grand_total.item())

    def test_empty_axis(self, setup):
        model, x, targets = setup
        empty = [{Axis.ROW: targets[0][Axis.ROW],
                  Axis.COL: AxisTargets(torch.zeros(0, 4, dtype=torch.float64),
                                        torch.zeros(0, 4, 2, dtype=torch.float64))}]
        cfg = CriterionConfig()
        loss = batch_loss(model(x, selectors_for(empty, cfg)), empty, cfg)
        assert np.isfinite(loss.grand_total.item())

    def test_backward_reaches_every_head(self, setup):
        model, x, targets = setup
        cfg = CriterionConfig()
        model.zero_grad()
        batch_loss(model(x, selectors_for(targets, cfg)), targets, cfg).grand_total.backward()
        for name in ("row_decoder.fine_head.layers.2.weight", "col_decoder.class_heads.2.weight",
                     "row_decoder.enc_score_head.weight", "backbone.stem.0.0.weight"):
            grad = dict(model.named_parameters())[name].grad
            assert grad is not None and grad.abs().sum() > 0, name
