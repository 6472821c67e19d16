"""The command line end to end: generate, train, infer, eval, render, bench.

Each step calls the same entry point as the ``sepformer`` console script
and prints the equivalent shell command.

    python demos/cli_pipeline.py [out_dir]
"""

import shlex
import sys
from pathlib import Path

from sepformer.cli import main

root = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/cli")
data, run, pred = root / "data", root / "run", root / "pred"


def step(*args, ok=(0,)):
    argv = [str(a) for a in args]
    print(f"\n$ sepformer {shlex.join(argv)}")
    code = main(argv)
    if code not in ok:
        raise SystemExit(f"step failed with exit code {code}")
    return code


step("generate", "--seed", 1, "--count", 20, "--out", data, "--size", 256, "--max-rows", 5, "--max-cols", 5)
step("train", "--data", data, "--out", run, "--epochs", 10, "--lr", 3e-4, "--channels", 32, "--k", 20,
     "--resize-set", "224,256", "--ablation", "two-stage", "angle", "on")
# exit code 1 flags images whose separators did not form a table; their documents are still written
step("infer", "--checkpoint", run / "model.sepf", "--dir", data, "--out", pred,
     "--tau-row", 0.5, "--tau-col", 0.5, ok=(0, 1))
step("eval", "--pred", pred, "--gt", data, "--out", root / "report.json")
step("render", "--image", data / "00000.png", "--separators", pred / "00000.json", "--out", root / "00000.svg")
step("bench", "--checkpoint", run / "model.sepf", "--image", data / "00000.png", "--repeat", 2)
print(f"\nartifacts under {root}")
