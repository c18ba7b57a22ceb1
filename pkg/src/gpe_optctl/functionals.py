"""Terminal cost, control penalties and update shape functions.

Time derivatives of the control use one stencil everywhere: the
difference quotient ``(lam[n+1] - lam[n]) / dt`` at each step midpoint,
which is the central difference for the staggered grid. Its transpose is
the standard three-point second difference, so the gradient of the
derivative penalty is exactly ``-gamma * lam''`` at interior nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ControlField, TimeGrid, WaveFunction, fidelity_overlap

__all__ = [
    "GrapeCostParams",
    "KrotovCostParams",
    "CostReport",
    "terminal_cost",
    "control_rate",
    "second_difference",
    "grape_penalty",
    "grape_penalty_gradient",
    "krotov_penalty",
    "trapezoid_weights",
    "make_shape",
]


@dataclass(frozen=True)
class GrapeCostParams:
    gamma: float = 1e-6

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


@dataclass(frozen=True)
class KrotovCostParams:
    """Step size ``k`` and shape ``s(t)``; the update weight is ``S = k * s``."""

    k: float
    shape: np.ndarray

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")
        shape = np.asarray(self.shape, dtype=float)
        if np.any(shape < 0) or np.any(shape > 1):
            raise ValueError("shape values must lie in [0, 1]")
        object.__setattr__(self, "shape", shape)

    @property
    def S(self) -> np.ndarray:
        return self.k * self.shape


@dataclass(frozen=True)
class CostReport:
    J_T: float
    penalty: float

    @property
    def J(self) -> float:
        return self.J_T + self.penalty


def terminal_cost(psi_T: WaveFunction, psi_d: WaveFunction) -> float:
    """``J_T = (1 - |<psi_d|psi_T>|^2) / 2``."""
    return 0.5 * (1.0 - fidelity_overlap(psi_T, psi_d))


def control_rate(field: ControlField) -> np.ndarray:
    """``d lam / dt`` at the ``n_steps`` step midpoints."""
    return np.diff(field.values) / field.time_grid.dt


def second_difference(values: np.ndarray, dt: float) -> np.ndarray:
    """Three-point ``d^2/dt^2`` at interior nodes (zero at the ends)."""
    out = np.zeros_like(values, dtype=float)
    out[1:-1] = (values[2:] - 2.0 * values[1:-1] + values[:-2]) / dt**2
    return out


def grape_penalty(field: ControlField, gamma: float) -> float:
    """``(gamma / 2) * int (d lam/dt)^2 dt``."""
    rate = control_rate(field)
    return 0.5 * gamma * float(np.sum(rate**2)) * field.time_grid.dt


def grape_penalty_gradient(field: ControlField, gamma: float) -> np.ndarray:
    """Exact derivative of :func:`grape_penalty` with respect to each node value."""
    rate = control_rate(field)
    grad = np.zeros(field.values.size)
    grad[:-1] -= gamma * rate
    grad[1:] += gamma * rate
    return grad


def trapezoid_weights(time_grid: TimeGrid) -> np.ndarray:
    w = np.full(time_grid.n_nodes, time_grid.dt)
    w[0] = w[-1] = 0.5 * time_grid.dt
    return w


def krotov_penalty(field: ControlField, reference: ControlField, params: KrotovCostParams) -> float:
    """``int (lam - lam_ref)^2 / S dt`` on the trapezoid rule.

    Nodes with ``S = 0`` contribute nothing if the control is unchanged
    there and raise ``ZeroDivisionError`` otherwise.
    """
    diff = field.values - reference.values
    S = params.S
    zero = S == 0
    if np.any(diff[zero] != 0):
        raise ZeroDivisionError("control changed where the update shape S(t) vanishes")
    ratio = np.zeros_like(diff)
    ratio[~zero] = diff[~zero] ** 2 / S[~zero]
    return float(np.sum(ratio * trapezoid_weights(field.time_grid)))


def make_shape(kind: str, ramp_fraction: float, time_grid: TimeGrid) -> np.ndarray:
    """Update shape ``s(t)`` on the time nodes.

    ``flat`` is one everywhere. ``sine_ramp`` rises as
    ``sin^2(pi t / (2 t_r))`` over ``t_r = ramp_fraction * T``, stays at one
    and falls symmetrically; it is exactly zero at ``t = 0`` and ``t = T``.
    """
    if not 0.0 <= ramp_fraction <= 0.5:
        raise ValueError("ramp_fraction must lie in [0, 0.5]")
    t = time_grid.t
    if kind == "flat":
        return np.ones_like(t)
    if kind != "sine_ramp":
        raise ValueError(f"unknown shape kind {kind!r}")
    T = time_grid.t_final
    s = np.ones_like(t)
    if ramp_fraction == 0.0:
        s[0] = s[-1] = 0.0
        return s
    t_r = ramp_fraction * T
    rise = t < t_r
    fall = (T - t) < t_r
    s[rise] = np.sin(0.5 * np.pi * t[rise] / t_r) ** 2
    s[fall] = np.sin(0.5 * np.pi * (T - t[fall]) / t_r) ** 2
    s[0] = s[-1] = 0.0
    return s
