"""Compare GRAPE and Krotov at two interaction strengths.

Builds a sweep over ``kappa`` and the optimizer kind from a single
configuration, runs it through the harness (one process per run) and
prints the number of solved equations each run needed to reach
``J_T = 3e-2``.

    python demos/nonlinearity_sweep.py out_dir [jobs]
"""

import math
import sys
from pathlib import Path

from gpe_optctl.harness import run_sweep
from gpe_optctl.trace import RunTrace


def first_below(rows, threshold):
    for row in rows:
        if float(row["J_T"]) <= threshold:
            return int(row["n_total"])
    return None


def main(out_dir, jobs=None):
    cfg = {
        "preset": "splitting",
        "optimizer": {"grape": {"stop_JT": 1e-3}, "krotov": {"stop_JT": 1e-3, "max_iterations": 100}},
        "sweep": {"axes": {
            "problem.phys.kappa": [math.pi / 2, 2 * math.pi],
            "optimizer.kind": ["grape", "krotov"],
        }},
    }
    results = run_sweep(cfg, out_dir, jobs)
    for label, status, n_total, jt in results:
        rows = RunTrace.read_csv(Path(out_dir) / label / "trace.csv")
        print(f"{label:28s} {status:10s} final J_T {jt:.2e}, "
              f"J_T<=3e-2 after {first_below(rows, 3e-2)} solves")


if __name__ == "__main__":
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    main(sys.argv[1], int(sys.argv[2]) if len(sys.argv) > 2 else None)
