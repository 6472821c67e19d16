import json
from pathlib import Path

import pytest

from sepformer.cli import main, parse_ablation
from sepformer.model import ModelConfig
from sepformer.synthdata import TableSpec, generate

TINY = ModelConfig(channels=16, heads=2, k_row=12, k_col=12, ffn_dim=32, stem_width=8,
                   backbone_widths=(8, 16, 16), num_points=16)


def files(directory: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["generate", "--seed", "3", "--count", "10", "--out", str(data), "--size", "160",
                 "--max-rows", "4", "--max-cols", "4"]) == 0
    cfg = root / "tiny.json"
    TINY.save(cfg)
    run = root / "run"
    assert main(["train", "--data", str(data), "--out", str(run), "--epochs", "1", "--config", str(cfg),
                 "--resize-set", "128", "--limit", "3"]) == 0
    return root, data, run / "model.sepf"


class TestGenerate:
    def test_outputs(self, workspace):
        _, data, _ = workspace
        names = files(data)
        assert sum(n.endswith(".png") for n in names) == 10
        assert sum(n.endswith(".json") and n[0].isdigit() for n in names) == 10
        manifest = json.loads(names["manifest.json"])
        assert [e["split"] for e in manifest["samples"]].count("eval") == 1

    def test_identical_bytes(self, workspace, tmp_path):
        _, data, _ = workspace
        assert main(["generate", "--seed", "3", "--count", "10", "--out", str(tmp_path), "--size", "160",
                     "--max-rows", "4", "--max-cols", "4"]) == 0
        assert files(tmp_path) == files(data)

    def test_no_spans(self, tmp_path):
        assert main(["generate", "--seed", "1", "--count", "12", "--out", str(tmp_path), "--spans-prob", "0",
                     "--size", "128"]) == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert all(e["spec"]["spans"] == [] for e in manifest["samples"])

    def test_unwritable(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["generate", "--count", "1", "--out", str(blocker / "sub")]) == 1
        assert "unwritable-path" in capsys.readouterr().err


class TestTrain:
    def test_artifacts(self, workspace):
        root, _, ckpt = workspace
        run = ckpt.parent
        assert ckpt.exists() and (run / "model.json").exists()
        resolved = json.loads((run / "train_config.json").read_text())
        assert resolved["train"]["lr"] == 3e-5 and resolved["train"]["schedule"] == "cosine"
        assert resolved["model"]["channels"] == 16

    def test_angle_off(self, workspace, tmp_path):
        root, data, _ = workspace
        assert main(["train", "--data", str(data), "--out", str(tmp_path), "--epochs", "1",
                     "--config", str(root / "tiny.json"), "--resize-set", "128", "--limit", "2",
                     "--ablation", "angle", "off"]) == 0
        record = json.loads((tmp_path / "train_log.jsonl").read_text().splitlines()[0])
        assert record["angle"] == 0.0

    def test_missing_data(self, tmp_path, capsys):
        assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "o"), "--epochs", "1"]) == 1
        assert "missing-dataset" in capsys.readouterr().err

    def test_parse_ablation(self):
        assert parse_ablation(["one-stage-6", "angle", "off", "ls-match=on"]) == \
            {"decoder": "one-stage-6", "angle": False, "ls-match": True}
        with pytest.raises(SystemExit):
            parse_ablation(["bogus"])


class TestInfer:
    def test_writes_schema_documents(self, workspace, tmp_path):
        _, data, ckpt = workspace
        code = main(["infer", "--checkpoint", str(ckpt), "--image", str(data / "00000.png"),
                     "--tau-row", "0", "--tau-col", "0", "--resize", "128", "--out", str(tmp_path)])
        doc = json.loads((tmp_path / "00000.json").read_text())
        assert {"image", "width", "height", "rows", "cols"} <= set(doc)
        assert len(doc["rows"]) == len(doc["cols"]) == 12
        assert all(len(s["line"]) == 4 and len(s["strip"]) == 16 for s in doc["rows"] + doc["cols"])
        # a barely trained model may collapse its separators; then the error is reported instead of HTML
        if code == 0:
            assert (tmp_path / "00000.html").read_text().startswith("<table>")
        else:
            assert json.loads((tmp_path / "errors.json").read_text())[0]["error"] == "degenerate-table"
        assert json.loads((tmp_path / "run_config.json").read_text())["tau_row"] == 0.0

    def test_nothing_passes_is_degenerate(self, workspace, tmp_path, capsys):
        _, data, ckpt = workspace
        code = main(["infer", "--checkpoint", str(ckpt), "--dir", str(data), "--tau-row", "1.01",
                     "--resize", "128", "--out", str(tmp_path)])
        assert code == 1
        errors = json.loads(capsys.readouterr().err)["errors"]
        assert len(errors) == 10 and all(e["error"] == "degenerate-table" for e in errors)
        # every image still got its separator document
        assert len(list(tmp_path.glob("0*.json"))) == 10

    def test_bad_checkpoint(self, tmp_path):
        (tmp_path / "x.sepf").write_bytes(b"junk")
        assert main(["infer", "--checkpoint", str(tmp_path / "x.sepf"), "--image", "nope.png",
                     "--out", str(tmp_path)]) == 1


class TestEvalRenderBench:
    def test_eval_self(self, workspace, tmp_path, capsys):
        _, data, _ = workspace
        report_path = tmp_path / "report.json"
        assert main(["eval", "--pred", str(data), "--gt", str(data), "--out", str(report_path)]) == 0
        agg = json.loads(report_path.read_text())["aggregate"]
        assert agg["adjacency"]["f1"] == 1.0 and agg["separators"]["f1"] == 1.0 and agg["teds_struct"] == 1.0

    def test_eval_mismatch(self, workspace, tmp_path):
        _, data, _ = workspace
        (tmp_path / "00000.json").write_bytes((data / "00000.json").read_bytes())
        assert main(["eval", "--pred", str(tmp_path), "--gt", str(data)]) == 1

    def test_render_two_by_two(self, tmp_path):
        gt = generate(TableSpec(2, 2, width=128, height=96))
        doc_path = tmp_path / "gt.json"
        doc_path.write_text(json.dumps(gt.to_document("gt.png")))
        from PIL import Image
        Image.fromarray(gt.image).save(tmp_path / "gt.png")
        out = tmp_path / "overlay.svg"
        assert main(["render", "--image", str(tmp_path / "gt.png"), "--separators", str(doc_path),
                     "--out", str(out)]) == 0
        svg = out.read_text()
        assert svg.count("<polyline") == 6
        assert svg.count('stroke="red"') == 3 and svg.count('stroke="blue"') == 3

    def test_bench(self, workspace, tmp_path, capsys):
        _, data, ckpt = workspace
        out = tmp_path / "bench.json"
        assert main(["bench", "--checkpoint", str(ckpt), "--image", str(data / "00000.png"), "--repeat", "3",
                     "--resize", "128", "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert list(report) == ["images", "repeat", "resize", "threads", "fps_per_pass", "fps_mean", "fps_median"]
        assert len(report["fps_per_pass"]) == 3 and report["fps_mean"] > 0
