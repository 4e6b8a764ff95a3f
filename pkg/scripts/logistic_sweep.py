"""Logistic-regression sweep: n in {50, 100, 200}, p = floor(n^(4/3)), with PCR.

Extra arguments are forwarded to `esprior sweep`, e.g. ``--reps 20 --jobs 4``.
"""

import os
import sys

from esprior.cli import main

ARGS = [
    "sweep",
    "--preset", "logistic-gaussian",
    "--grid", "50,100,200",
    "--reps", "5",
    "--methods", "proposed,pcr",
    "--evr", "0.999",
    "--swap-average",
    "--factor", "lowrank",
    "--out", os.path.join(os.environ.get("ESPRIOR_OUT_ROOT", "runs"), "logistic_sweep"),
]

if __name__ == "__main__":
    sys.exit(main(ARGS + sys.argv[1:]))
