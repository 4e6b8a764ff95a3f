"""Fit, evaluate and run the PCR baseline on ARCENE-format files.

    python scripts/arcene_eval.py DATA_DIR [OUT_DIR]

DATA_DIR must hold arcene_train.data/.labels and arcene_valid.data/.labels.
With ``--synthetic`` a random fixture of the same shape (100 x 10000 per
split) is written to DATA_DIR first, which exercises ingestion only.
"""

import argparse
import os
import sys

import numpy as np

from esprior.cli import main


def write_fixture(root, seed=0):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(10000) / 100.0
    for split in ("train", "valid"):
        X = rng.integers(0, 1000, size=(100, 10000)) * (rng.uniform(size=(100, 10000)) < 0.3)
        y = np.where((X - X.mean(axis=0)) @ w + rng.standard_normal(100) > 0, 1, -1)
        np.savetxt(os.path.join(root, f"arcene_{split}.data"), X, fmt="%d")
        np.savetxt(os.path.join(root, f"arcene_{split}.labels"), y, fmt="%d")


def run(data, out, seed=0):
    f = lambda s: os.path.join(data, f"arcene_{s}")  # noqa: E731
    common = ["--format", "arcene", "--seed", str(seed)]
    steps = [
        ["fit", "--train", f("train.data"), "--labels", f("train.labels"), "--evr", "0.999",
         "--swap-average", "--out", os.path.join(out, "fit")],
        ["evaluate", "--model", os.path.join(out, "fit", "model.npz"), "--test", f("valid.data"),
         "--test-labels", f("valid.labels"), "--out", os.path.join(out, "evaluate")],
        ["baseline", "pcr", "--train", f("train.data"), "--labels", f("train.labels"),
         "--test", f("valid.data"), "--test-labels", f("valid.labels"), "--out", os.path.join(out, "pcr")],
    ]
    for step in steps:
        code = main(step + common)
        if code:
            return code
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("data")
    ap.add_argument("out", nargs="?", default=os.path.join(os.environ.get("ESPRIOR_OUT_ROOT", "runs"), "arcene"))
    ap.add_argument("--synthetic", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    if a.synthetic:
        os.makedirs(a.data, exist_ok=True)
        write_fixture(a.data, a.seed)
    sys.exit(run(a.data, a.out, a.seed))
