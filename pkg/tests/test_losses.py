import math

import numpy as np
import pytest
import torch

from sepformer.losses import (ClassificationScope, LossBreakdown, LossConfig, angle_loss, axis_breakdown,
                              classification_loss, classification_loss_from_logits, line_loss,
                              linestrip_loss, total_loss)
from oracles import gradient_check

T = lambda x: torch.tensor(x, dtype=torch.float64)


class TestClassification:
    def test_perfect(self):
        assert classification_loss(T([1, 0]), T([1.0, 0.0])).item() == pytest.approx(0, abs=1e-6)

    def test_half(self):
        assert classification_loss(T([1]), T([0.5])).item() == pytest.approx(math.log(2))

    def test_all_queries_symmetric(self):
        assert classification_loss(T([1, 0, 0, 0]), T([0.5] * 4)).item() == pytest.approx(math.log(2))

    def test_matched_only_scope(self):
        cfg = LossConfig(classification_scope=ClassificationScope.MATCHED_ONLY)
        assert classification_loss(T([1, 0]), T([0.5, 0.9]), cfg).item() == pytest.approx(math.log(2))
        assert classification_loss(T([0, 0]), T([0.5, 0.9]), cfg).item() == 0

    def test_logit_form_agrees(self):
        rng = np.random.default_rng(0)
        logits = T(rng.normal(size=12) * 3)
        labels = T((rng.uniform(size=12) > 0.5).astype(float))
        a = classification_loss(labels, torch.sigmoid(logits)).item()
        b = classification_loss_from_logits(labels, logits).item()
        assert a == pytest.approx(b, abs=1e-9)

    def test_gradient(self):
        s = T([0.2, 0.7, 0.4]).requires_grad_(True)
        assert gradient_check(lambda s: classification_loss(T([1, 0, 1]), s), [s]) <= 1e-6


class TestAngle:
    def test_aligned_quarter(self):
        assert angle_loss(T([[0, 0, 0.25, 0]]), T([[0, 0, 1, 0]])).item() == pytest.approx(0, abs=1e-12)

    def test_perpendicular(self):
        assert angle_loss(T([[0, 0, 0.3, 0]]), T([[0, 0, 0, 1]])).item() == pytest.approx(1)

    def test_aligned_half(self):
        assert angle_loss(T([[0, 0, 0.5, 0]]), T([[0, 0, 2, 0]])).item() == pytest.approx(0.5)

    def test_zero_prediction_is_max_misalignment(self):
        assert angle_loss(T([[0, 0, 0.5, 0]]), T([[0.2, 0.2, 0.2, 0.2]])).item() == pytest.approx(1)

    def test_short_gt_skipped(self):
        out = angle_loss(T([[0, 0, 0, 0], [0, 0, 0.5, 0]]), T([[0, 0, 1, 0], [0, 0, 1, 0]]))
        assert out.item() == pytest.approx(0.5)

    def test_may_be_negative(self):
        assert angle_loss(T([[0, 0, 0.1, 0]]), T([[0, 0, 1, 0]])).item() == pytest.approx(1 - 1 / 0.4)

    def test_gap_shrinks_with_length(self):
        gaps = []
        for length in (0.1, 0.2, 0.4, 0.8):
            gt = T([[0, 0, length, 0]])
            gaps.append((angle_loss(gt, T([[0, 0, 0, 1]])) - angle_loss(gt, T([[0, 0, 1, 0]]))).item())
        assert all(a > b for a, b in zip(gaps, gaps[1:]))

    def test_gradient(self):
        gt = T([[0.1, 0.2, 0.7, 0.3], [0.2, 0.1, 0.25, 0.9]])
        pred = T([[0.12, 0.25, 0.6, 0.4], [0.3, 0.1, 0.2, 0.8]]).requires_grad_(True)
        assert gradient_check(lambda p: angle_loss(gt, p), [pred]) <= 1e-6


class TestLine:
    def test_identical(self):
        assert line_loss(T([[0, 0, 1, 0]]), T([[0, 0, 1, 0]])).item() == 0

    def test_offset(self):
        assert line_loss(T([[0, 0, 1, 0]]), T([[0, 0.1, 1, 0.1]])).item() == pytest.approx(0.2)

    def test_gradient_is_sign_pattern(self):
        gt = T([[0.1, 0.2, 0.7, 0.3]])
        pred = T([[0.15, 0.1, 0.9, 0.35]]).requires_grad_(True)
        line_loss(gt, pred).backward()
        assert pred.grad.tolist() == [[1.0, -1.0, 1.0, 1.0]]
        pred.grad = None
        assert gradient_check(lambda p: line_loss(gt, p), [pred]) <= 1e-8

    def test_empty(self):
        assert line_loss(torch.zeros(0, 4), torch.zeros(0, 4)).item() == 0


class TestLineStrip:
    def test_identical(self):
        s = torch.rand(2, 16, 2, dtype=torch.float64)
        assert linestrip_loss(s, s.clone()).item() == 0

    def test_uniform_offset(self):
        s = torch.rand(3, 16, 2, dtype=torch.float64)
        moved = s + T([0.0, 0.1])
        assert linestrip_loss(s, moved).item() == pytest.approx(0.1)

    def test_hand_summed(self):
        rng = np.random.default_rng(5)
        a, b = rng.uniform(size=(4, 16, 2)), rng.uniform(size=(4, 16, 2))
        want = 0.0
        for i in range(4):
            per = 0.0
            for t in range(16):
                per += abs(a[i, t, 0] - b[i, t, 0]) + abs(a[i, t, 1] - b[i, t, 1])
            want += per / 16
        assert linestrip_loss(T(a), T(b)).item() == pytest.approx(want / 4, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            linestrip_loss(torch.zeros(1, 16, 2), torch.zeros(1, 8, 2))

    def test_gradient(self):
        rng = np.random.default_rng(6)
        gt = T(rng.uniform(size=(2, 4, 2)))
        pred = T(rng.uniform(size=(2, 4, 2))).requires_grad_(True)
        assert gradient_check(lambda p: linestrip_loss(gt, p), [pred]) <= 1e-8


def breakdown(cls, angle, line, strip):
    z = T(0.0)
    return LossBreakdown(T(cls), T(angle), T(line), T(strip), z, z)


class TestTotal:
    def test_zero(self):
        assert total_loss(breakdown(0, 0, 0, 0), breakdown(0, 0, 0, 0)).grand_total.item() == 0

    def test_weighting(self):
        b = axis_breakdown(T(0.2), T(0.1), T(0.3), T(0.4))
        assert b.axis_total.item() == pytest.approx(1.6)
        both = total_loss(breakdown(0.2, 0.1, 0.3, 0.4), breakdown(0.2, 0.1, 0.3, 0.4))
        assert both.grand_total.item() == pytest.approx(3.2)

    def test_angle_disabled(self):
        b = axis_breakdown(T(0.2), T(0.1), T(0.3), T(0.4), LossConfig(angle_loss_enabled=False))
        assert b.axis_total.item() == pytest.approx(1.5)
        assert b.angle.item() == 0

    def test_linear_in_line_weight(self):
        base = axis_breakdown(T(0.2), T(0.1), T(0.3), T(0.4), LossConfig(lambda_line=3)).axis_total.item()
        doubled = axis_breakdown(T(0.2), T(0.1), T(0.3), T(0.4), LossConfig(lambda_line=6)).axis_total.item()
        assert doubled - base == pytest.approx(0.9, abs=1e-12)

    def test_pair_order_invariant(self):
        rng = np.random.default_rng(7)
        gt, pred = T(rng.uniform(size=(5, 4))), T(rng.uniform(size=(5, 4)))
        perm = torch.tensor(rng.permutation(5))
        assert angle_loss(gt, pred).item() == pytest.approx(angle_loss(gt[perm], pred[perm]).item(), abs=1e-12)
        assert line_loss(gt, pred).item() == pytest.approx(line_loss(gt[perm], pred[perm]).item(), abs=1e-12)

    def test_config_guards(self):
        with pytest.raises(ValueError):
            LossConfig(lambda_line=-1)
        with pytest.raises(ValueError):
            LossConfig(short_penalty_factor=0)
