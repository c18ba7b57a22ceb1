"""A state-to-state control problem bundled with its propagator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import (
    EquationCounter,
    PropagatorConfig,
    SplitStepPropagator,
    Trajectory,
    adjoint_terminal_condition,
)
from .functionals import terminal_cost
from .grid import ControlField, PhysicalParams, SpatialGrid, TimeGrid, WaveFunction
from .potentials import PotentialFamily

__all__ = ["ControlProblem"]


@dataclass
class ControlProblem:
    """Initial and desired states, dynamics, and the shared equation counter.

    Every forward or adjoint solve goes through :meth:`forward` or
    :meth:`adjoint`, so ``counter`` is the single source of truth for the
    number of solved equations.
    """

    grid: SpatialGrid
    time_grid: TimeGrid
    potential: PotentialFamily
    phys: PhysicalParams
    psi0: WaveFunction
    psi_d: WaveFunction
    counter: EquationCounter = field(default_factory=EquationCounter)
    config: Optional[PropagatorConfig] = None
    name: str = "problem"

    def __post_init__(self):
        self.propagator = SplitStepPropagator(
            self.grid, self.time_grid, self.potential, self.phys, self.counter, self.config
        )

    def control(self, values, fixed_endpoints=True) -> ControlField:
        return ControlField(self.time_grid, values, fixed_endpoints)

    def forward(self, control: ControlField, store_trajectory: bool = True) -> Trajectory:
        return self.propagator.forward(self.psi0, control, store_trajectory)

    def terminal_cost(self, traj: Trajectory) -> float:
        return terminal_cost(traj.final_state, self.psi_d)

    def adjoint(self, traj: Trajectory, control: ControlField) -> Trajectory:
        p_T = adjoint_terminal_condition(traj.final_state, self.psi_d)
        return self.propagator.adjoint(p_T, traj, control)

    def step_overlaps(self, traj, costraj, control) -> np.ndarray:
        return self.propagator.step_overlaps(traj, costraj, control)

    def terminal_gradient(self, traj, costraj, control) -> np.ndarray:
        """Exact ``dJ_T / d lam_n`` of the discretized problem, per node."""
        ov = self.step_overlaps(traj, costraj, control)
        half = 0.5 * self.time_grid.dt * ov
        grad = np.zeros(self.time_grid.n_nodes)
        grad[:-1] -= half
        grad[1:] -= half
        return grad

    def fresh_counter(self) -> "ControlProblem":
        """Same problem with a new, zeroed equation counter."""
        return ControlProblem(
            self.grid, self.time_grid, self.potential, self.phys,
            self.psi0, self.psi_d, EquationCounter(), self.config, self.name,
        )
