import numpy as np
import pytest
import torch

from sepformer.criterion import CriterionConfig, batch_loss, make_targets, selectors_for
from sepformer.geometry import Axis, SingleLine, sample_points
from sepformer.model import DecoderStages, ModelConfig, SepFormer, build_model
from sepformer.model.backbone import Backbone
from sepformer.model.deformable import DeformableAttention
from sepformer.numerics import bilinear_sample, inverse_sigmoid

SMALL = ModelConfig(channels=16, heads=2, k_row=6, k_col=6, ffn_dim=32, stem_width=8,
                    backbone_widths=(8, 16, 16), num_points=4)
TINY = ModelConfig(channels=8, heads=2, k_row=3, k_col=3, ffn_dim=16, stem_width=4,
                   backbone_widths=(8, 8, 8), num_points=4, detach_references=False)


def image(h=64, w=64, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(1, 3, h, w, generator=g, dtype=dtype)


def line_targets(coords, axis, p, dtype):
    strips = [sample_points(SingleLine.from_coords(c), p).points for c in coords]
    return make_targets(coords, strips, axis, dtype)


class TestBackbone:
    @pytest.mark.parametrize("h, w", [(256, 256), (256, 320)])
    def test_strides(self, h, w):
        feats = Backbone(8, (8, 16, 16))(torch.zeros(1, 3, h, w))
        assert [f.shape[-2:] for f in feats] == [(h // s, w // s) for s in (8, 16, 32)]

    def test_indivisible(self):
        with pytest.raises(ValueError):
            Backbone(8, (8, 16, 16))(torch.zeros(1, 3, 100, 256))


class TestEncoder:
    def test_sequence_length(self):
        model = build_model(SMALL)
        (mem,) = model.encode(torch.zeros(1, 3, 256, 256))
        assert mem.sequence.shape == (1344, 16)
        assert mem.level_offsets == [0, 1024, 1280]

    def test_zero_image_finite(self):
        model = build_model(SMALL)
        (mem,) = model.encode(torch.zeros(1, 3, 64, 64))
        assert torch.isfinite(mem.sequence).all()


class TestDeformable:
    def test_reduction_to_bilinear_sample(self):
        torch.manual_seed(0)
        att = DeformableAttention(dim=4, heads=1, levels=1, points=1, refs=1).double()
        with torch.no_grad():
            att.sampling_offsets.bias.zero_()
        memory = torch.randn(5 * 6, 4, dtype=torch.float64)
        refs = torch.tensor([[[0.3, 0.6]], [[0.9, 0.1]]], dtype=torch.float64)
        out = att(torch.randn(2, 4, dtype=torch.float64), refs, torch.ones(1, dtype=torch.float64), memory, [(5, 6)])
        (values,) = att.project_values(memory, [(5, 6)])
        expect = att.output_proj(bilinear_sample(values[0], refs[:, 0]))
        assert torch.allclose(out, expect, atol=1e-12)

    def test_reference_gradient(self):
        torch.manual_seed(1)
        att = DeformableAttention(dim=4, heads=2, levels=2, points=2, refs=2).double()
        memory = torch.randn(4 * 4 + 2 * 2, 4, dtype=torch.float64)
        query = torch.randn(3, 4, dtype=torch.float64)
        refs = (torch.rand(3, 2, 2, dtype=torch.float64) * 0.6 + 0.2).requires_grad_(True)
        scale = torch.full((1,), 0.01, dtype=torch.float64)
        fn = lambda r: att(query, r, scale, memory, [(4, 4), (2, 2)]).pow(2).sum()
        assert torch.autograd.gradcheck(lambda r: fn(r), (refs,), eps=1e-6, atol=1e-6)

    def test_shape_guard(self):
        att = DeformableAttention(dim=4, heads=1, levels=1, points=1, refs=2)
        with pytest.raises(ValueError):
            att(torch.zeros(2, 4), torch.zeros(2, 3, 2), torch.ones(1), torch.zeros(4, 4), [(2, 2)])


def every_query(scores, lines):
    return torch.arange(len(scores))


@pytest.fixture(scope="module")
def run():
    model = build_model(SMALL, seed=3)
    return model, model(image(), [{Axis.ROW: every_query, Axis.COL: every_query}])[0]


class TestForward:
    def test_query_counts(self, run):
        model, out = run
        for axis in Axis:
            o = out[axis]
            assert o.proposal_logits.shape == (64 + 16 + 4,)
            assert len(o.coarse) == 3 and len(o.fine) == 3
            assert o.final.lines.shape == (6, 4)

    def test_coordinates_canonical_and_bounded(self, run):
        _, out = run
        for axis in Axis:
            k = 0 if axis == Axis.ROW else 1
            for stage in out[axis].coarse:
                assert stage.lines.min() >= 0 and stage.lines.max() <= 1
                assert bool((stage.lines[:, k] <= stage.lines[:, k + 2]).all())
            for stage in out[axis].fine:
                assert stage.strips.shape[1:] == (4, 2)
                assert stage.strips.min() >= 0 and stage.strips.max() <= 1

    def test_refinement_telescopes(self, run):
        _, out = run
        for axis in Axis:
            o = out[axis]
            total = o.init_logits + sum(s.deltas for s in o.coarse)
            assert torch.allclose(o.coarse[-1].raw_logits, total, atol=1e-5)

    def test_zero_deltas_keep_references(self, run):
        # regression heads start at zero output, so an untrained model leaves references in place
        model, out = run
        o = out[Axis.ROW]
        for stage in o.coarse:
            assert torch.all(stage.deltas == 0)
        first = o.fine[0]
        coarse_lines = o.coarse[-1].lines[first.query_index]
        sampled = torch.stack([torch.as_tensor(sample_points(SingleLine.from_coords(l), 4).points)
                               for l in coarse_lines.detach().double()])
        assert torch.allclose(first.strips.double(), sampled, atol=1e-5)

    def test_topk_prefers_high_scores(self, run):
        _, out = run
        o = out[Axis.COL]
        chosen = o.proposal_logits[o.topk]
        rest = torch.ones_like(o.proposal_logits, dtype=torch.bool)
        rest[o.topk] = False
        assert chosen.min() >= o.proposal_logits[rest].max()

    def test_predict_returns_all_queries(self):
        model = build_model(SMALL, seed=3)
        res = model.predict(image()[0], tau_row=0.0, tau_col=0.999)
        assert len(res["row"]) == 6 and len(res["col"]) == 6
        assert all(s.strip is not None for s in res["row"])
        assert all(0 <= s.score <= 1 for s in res["row"] + res["col"])

    @pytest.mark.parametrize("stages, layers", [(DecoderStages.ONE_STAGE_3, 3), (DecoderStages.ONE_STAGE_6, 6)])
    def test_one_stage_variants(self, stages, layers):
        cfg = ModelConfig(**{**SMALL.to_dict(), "decoder_stages": stages.value,
                             "strides": (8, 16, 32), "backbone_widths": (8, 16, 16)})
        out = build_model(cfg)(image())[0][Axis.ROW]
        assert len(out.coarse) == layers and not out.fine
        assert out.final.strips.shape == (6, 4, 2)

    def test_k_exceeds_memory(self):
        cfg = ModelConfig(**{**SMALL.to_dict(), "k_row": 200, "strides": (8, 16, 32),
                             "backbone_widths": (8, 16, 16)})
        with pytest.raises(ValueError):
            build_model(cfg)(image())


class TestDeterminismAndCheckpoint:
    def test_same_seed_same_weights(self):
        a, b = build_model(SMALL, seed=5), build_model(SMALL, seed=5)
        assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))

    def test_bit_identical_forward(self):
        model = build_model(SMALL, seed=5)
        x = image(seed=2)
        a = model.predict(x[0])["aux"][Axis.ROW].final.lines
        b = model.predict(x[0])["aux"][Axis.ROW].final.lines
        assert torch.equal(a, b)

    def test_checkpoint_roundtrip(self, tmp_path):
        model = build_model(SMALL, seed=6)
        path = tmp_path / "model.sepf"
        model.save(path)
        assert path.with_suffix(".json").exists()
        back = SepFormer.load(path)
        assert back.cfg == model.cfg
        x = image(seed=4)[0]
        for axis in Axis:
            a = model.predict(x, 0.0, 0.0)["aux"][axis].final
            b = back.predict(x, 0.0, 0.0)["aux"][axis].final
            assert torch.equal(a.lines, b.lines) and torch.equal(a.strips, b.strips)

    def test_config_guards(self):
        with pytest.raises(ValueError):
            ModelConfig(channels=10, heads=4)
        with pytest.raises(ValueError):
            ModelConfig(tau_row=1.0)
        assert ModelConfig.full_scale().channels == 256


def test_end_to_end_gradient():
    """Directional finite differences of the full training objective, per parameter tensor.

    References stay attached so that autograd sees the same function the
    perturbed forward passes do.
    """
    model = build_model(TINY, seed=0, dtype=torch.float64)
    # at initialization every reference sits on a pixel-centre node, where
    # bilinear sampling has a kink; a small jitter moves to a generic point
    jitter = torch.Generator().manual_seed(9)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.02 * torch.randn(p.shape, generator=jitter, dtype=p.dtype))
    x = image(32, 32, seed=1, dtype=torch.float64)
    targets = [{Axis.ROW: line_targets([[0.09, 0.31, 0.91, 0.36], [0.07, 0.69, 0.92, 0.71]], Axis.ROW, 4, torch.float64),
                Axis.COL: line_targets([[0.53, 0.11, 0.46, 0.93]], Axis.COL, 4, torch.float64)}]
    crit = CriterionConfig()
    selectors = selectors_for(targets, crit)

    def objective():
        return batch_loss(model(x, selectors), targets, crit).grand_total

    model.zero_grad()
    objective().backward()
    rng = torch.Generator().manual_seed(0)
    h, worst = 1e-6, 0.0
    for name, p in model.named_parameters():
        v = torch.randn(p.shape, generator=rng, dtype=p.dtype)
        analytic = float((p.grad * v).sum()) if p.grad is not None else 0.0
        with torch.no_grad():
            p.add_(h * v)
            up = float(objective())
            p.sub_(2 * h * v)
            down = float(objective())
            p.add_(h * v)
        numeric = (up - down) / (2 * h)
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-5)
        worst = max(worst, err)
        assert err <= 1e-3, (name, analytic, numeric)
    assert worst <= 1e-3
