"""Softplus single-neuron regression sweep with the noise variance learned.

Extra arguments are forwarded to `esprior sweep`.
"""

import os
import sys

from esprior.cli import main

ARGS = [
    "sweep",
    "--preset", "softplus-gaussian",
    "--grid", "50,100,200",
    "--reps", "5",
    "--methods", "proposed,pcr",
    "--evr", "0.999",
    "--swap-average",
    "--unknown-variance",
    "--factor", "lowrank",
    "--out", os.path.join(os.environ.get("ESPRIOR_OUT_ROOT", "runs"), "softplus_sweep"),
]

if __name__ == "__main__":
    sys.exit(main(ARGS + sys.argv[1:]))
