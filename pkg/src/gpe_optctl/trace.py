"""Per-iteration optimization records."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

__all__ = ["TRACE_COLUMNS", "RunTrace"]

TRACE_COLUMNS = [
    "iteration",
    "scheme",
    "n_forward",
    "n_backward",
    "n_total",
    "J_T",
    "J",
    "penalty",
    "step",
    "grad_norm",
    "k",
    "update_mode",
    "newton_mean",
    "newton_max",
    "flags",
]


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


@dataclass
class RunTrace:
    """Rows of ``{iteration, n_forward, n_backward, n_total, J_T, J, ...}``.

    ``equations`` additionally logs, after every single solved equation,
    the terminal cost of the currently accepted control. This is the
    cost-versus-solved-equations curve. Wall-clock times are kept apart
    from the numerical rows so that exported traces are reproducible.
    """

    rows: List[dict] = field(default_factory=list)
    equations: List[tuple] = field(default_factory=list)
    snapshots: List[tuple] = field(default_factory=list)
    events: List[str] = field(default_factory=list)
    wall_times: List[float] = field(default_factory=list)
    status: str = "running"
    final_control: Optional[np.ndarray] = None
    final_density: Optional[np.ndarray] = None
    desired_density: Optional[np.ndarray] = None
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def add_row(self, counter, iteration, scheme, J_T, penalty=0.0, **extra):
        n_total = counter.n_forward + counter.n_backward
        if self.rows and n_total <= self.rows[-1]["n_total"]:
            raise ValueError("n_total must increase strictly between trace rows")
        row = dict.fromkeys(TRACE_COLUMNS)
        row.update(
            iteration=int(iteration),
            scheme=scheme,
            n_forward=counter.n_forward,
            n_backward=counter.n_backward,
            n_total=n_total,
            J_T=float(J_T),
            penalty=float(penalty),
            J=float(J_T) + float(penalty),
        )
        unknown = set(extra) - set(TRACE_COLUMNS)
        if unknown:
            raise KeyError(f"unknown trace columns {sorted(unknown)}")
        row.update(extra)
        self.rows.append(row)
        self.wall_times.append(time.perf_counter() - self._t0)
        return row

    def log_equation(self, counter, kind, J_T_current):
        self.equations.append((counter.n_forward, counter.n_backward, kind, float(J_T_current)))

    def snapshot(self, iteration, values):
        self.snapshots.append((int(iteration), np.array(values, dtype=float)))

    def column(self, name) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    @property
    def J_T(self) -> np.ndarray:
        return self.column("J_T")

    @property
    def n_total(self) -> np.ndarray:
        return self.column("n_total")

    def equation_curve(self):
        """``(n, J_T)`` after every solved equation."""
        n = np.array([f + b for f, b, _, _ in self.equations], dtype=float)
        jt = np.array([j for *_, j in self.equations], dtype=float)
        return n, jt

    def equations_to_reach(self, threshold: float) -> Optional[int]:
        """Solved equations until the accepted ``J_T`` first drops to ``threshold``."""
        for f, b, _, jt in self.equations:
            if jt <= threshold:
                return f + b
        return None

    def extend(self, other: "RunTrace"):
        """Append the rows of a follow-up run (used by the hybrid scheme)."""
        self.rows.extend(other.rows)
        self.equations.extend(other.equations)
        self.snapshots.extend(other.snapshots)
        self.events.extend(other.events)
        self.wall_times.extend(other.wall_times)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for row in self.rows:
                writer.writerow([_fmt(row[c]) for c in TRACE_COLUMNS])

    @staticmethod
    def read_csv(path) -> List[dict]:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
