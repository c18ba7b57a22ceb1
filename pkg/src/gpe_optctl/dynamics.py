r"""Forward and adjoint Gross-Pitaevskii propagation, stationary states.

The forward equation

.. math::

    i\dot\psi = \Big(-\frac{1}{2M}\partial_x^2 + V(x,\lambda(t))
                + \kappa|\psi|^2\Big)\psi

is integrated with a Strang splitting: half a kinetic step in Fourier
space, a full pointwise step with the potential evaluated at the step
midpoint control and the nonlinearity evaluated on the half-stepped
state, and another half kinetic step. Every sub-step is unitary, so the
norm is conserved to rounding, and the scheme is exactly time-reversible.

The co-state obeys

.. math::

    i\dot p = \Big(-\frac{1}{2M}\partial_x^2 + V + 2\kappa|\psi|^2\Big)p
              + \kappa\psi^2 p^*,
    \qquad p(T) = i\langle\psi_d|\psi(T)\rangle\psi_d .

It is integrated backward with the transpose of the forward step, so that
the control gradient assembled from ``(psi, p)`` is the exact derivative
of the discrete terminal cost. The pointwise part of that transpose is a
consistent first-order-per-step integrator of the real-linear
``(p, p*)`` coupling above.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .grid import (
    ControlField,
    PhysicalParams,
    Role,
    SpatialGrid,
    TimeGrid,
    WaveFunction,
    GridMismatchError,
    inner_product,
)
from .potentials import PotentialFamily

__all__ = [
    "NormDriftError",
    "StationaryStateError",
    "EquationCounter",
    "PropagatorConfig",
    "Trajectory",
    "SplitStepPropagator",
    "propagate_forward",
    "propagate_backward",
    "propagate_adjoint",
    "adjoint_terminal_condition",
    "step_overlaps",
    "ground_state",
    "excited_state",
    "energy",
    "chemical_potential",
    "kinetic_matrix",
    "count_nodes",
    "save_trajectory",
    "load_trajectory",
]

logger = logging.getLogger(__name__)


class NormDriftError(RuntimeError):
    """The forward propagation lost norm beyond the configured tolerance."""


class StationaryStateError(RuntimeError):
    """A stationary-state solve did not converge."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class EquationCounter:
    """Counts full ``[0, T]`` solves of the forward and adjoint equations."""

    n_forward: int = 0
    n_backward: int = 0

    @property
    def n_total(self) -> int:
        return self.n_forward + self.n_backward


@dataclass(frozen=True)
class PropagatorConfig:
    scheme: str = "split_step_second_order"
    norm_check_tol: float = 1e-9

    def __post_init__(self):
        if self.scheme != "split_step_second_order":
            raise ValueError(f"unknown propagation scheme {self.scheme!r}")


@dataclass
class Trajectory:
    """Wavefunction history at the time nodes.

    ``states`` has shape ``(n_steps + 1, n_points)`` when the full history
    was stored; otherwise only ``final`` is available.
    """

    grid: SpatialGrid
    time_grid: TimeGrid
    final: np.ndarray
    states: Optional[np.ndarray] = None
    role: Role = Role.STATE

    def __getitem__(self, n) -> WaveFunction:
        if self.states is None:
            raise ValueError("trajectory was propagated without storing the history")
        return WaveFunction(self.grid, self.states[n], self.role)

    def __len__(self):
        return 0 if self.states is None else len(self.states)

    @property
    def final_state(self) -> WaveFunction:
        return WaveFunction(self.grid, self.final, self.role)

    @property
    def densities(self) -> np.ndarray:
        if self.states is None:
            raise ValueError("trajectory was propagated without storing the history")
        return np.abs(self.states) ** 2


class SplitStepPropagator:
    """Strang split-step solver for one grid, time grid, potential and ``kappa``.

    Holds its own kinetic phase tables; instances are cheap and must not be
    shared between threads.
    """

    def __init__(
        self,
        grid: SpatialGrid,
        time_grid: TimeGrid,
        potential: PotentialFamily,
        phys: PhysicalParams,
        counter: Optional[EquationCounter] = None,
        config: Optional[PropagatorConfig] = None,
    ):
        self.grid = grid
        self.time_grid = time_grid
        self.potential = potential
        self.phys = phys
        self.counter = counter if counter is not None else EquationCounter()
        self.config = config or PropagatorConfig()
        dt = time_grid.dt
        k = grid.wavenumbers
        self.kinetic = k**2 / (2.0 * phys.mass)
        self._half = np.exp(-0.5j * dt * self.kinetic)
        self._half_inv = np.conj(self._half)

    # -- small helpers ---------------------------------------------------

    def _kin(self, psi, table):
        return np.fft.ifft(table * np.fft.fft(psi, axis=-1), axis=-1)

    def _check_control(self, control: ControlField):
        if control.time_grid != self.time_grid:
            raise GridMismatchError("control is defined on a different time grid")

    def _check_state(self, psi: WaveFunction):
        if psi.grid != self.grid:
            raise GridMismatchError("wavefunction is defined on a different grid")

    def potential_phases(self, control: ControlField) -> np.ndarray:
        """``exp(-i dt V(x, lam_mid))`` for every step, shape ``(n_steps, n_points)``."""
        v = self.potential.value(self.grid.x[None, :], control.midpoints[:, None])
        return np.exp(-1j * self.time_grid.dt * v)

    def midstep_dv(self, control: ControlField) -> np.ndarray:
        return self.potential.first(self.grid.x[None, :], control.midpoints[:, None])

    def _check_norm(self, norms_sq, initial=1.0):
        drift = np.max(np.abs(np.sqrt(norms_sq) - initial))
        allowed = self.config.norm_check_tol * max(self.time_grid.t_final, 1.0)
        if not np.isfinite(drift) or drift > allowed:
            raise NormDriftError(
                f"norm drift {drift:.3e} exceeds {allowed:.1e}; "
                "reduce dt or enlarge the grid"
            )

    # -- propagation -----------------------------------------------------

    def forward(self, psi0: WaveFunction, control: ControlField, store_trajectory=True):
        self._check_state(psi0)
        self._check_control(control)
        psi0.check_normalized()
        phases = self.potential_phases(control)
        kdt = self.phys.kappa * self.time_grid.dt
        half = self._half
        fft, ifft = np.fft.fft, np.fft.ifft
        n_steps = self.time_grid.n_steps
        psi = psi0.amplitudes.copy()
        states = None
        if store_trajectory:
            states = np.empty((n_steps + 1, self.grid.n_points), dtype=complex)
            states[0] = psi
        for n in range(n_steps):
            phi = ifft(half * fft(psi))
            if kdt:
                chi = phi * phases[n] * np.exp(-1j * kdt * (phi.real**2 + phi.imag**2))
            else:
                chi = phi * phases[n]
            psi = ifft(half * fft(chi))
            if store_trajectory:
                states[n + 1] = psi
        self.counter.n_forward += 1
        dx = self.grid.dx
        start = psi0.norm
        if store_trajectory:
            self._check_norm(np.sum(np.abs(states) ** 2, axis=1) * dx, start)
        else:
            self._check_norm(np.array([np.sum(np.abs(psi) ** 2) * dx]), start)
        return Trajectory(self.grid, self.time_grid, psi, states)

    def backward(self, psi_T: WaveFunction, control: ControlField, store_trajectory=True):
        """Run the forward equation from ``T`` back to ``0`` (``dt -> -dt``)."""
        self._check_state(psi_T)
        self._check_control(control)
        phases = np.conj(self.potential_phases(control))
        kdt = self.phys.kappa * self.time_grid.dt
        inv = self._half_inv
        fft, ifft = np.fft.fft, np.fft.ifft
        n_steps = self.time_grid.n_steps
        psi = psi_T.amplitudes.copy()
        states = None
        if store_trajectory:
            states = np.empty((n_steps + 1, self.grid.n_points), dtype=complex)
            states[n_steps] = psi
        for n in range(n_steps - 1, -1, -1):
            chi = ifft(inv * fft(psi))
            if kdt:
                chi = chi * phases[n] * np.exp(1j * kdt * (chi.real**2 + chi.imag**2))
            else:
                chi = chi * phases[n]
            psi = ifft(inv * fft(chi))
            if store_trajectory:
                states[n] = psi
        return Trajectory(self.grid, self.time_grid, psi, states)

    def adjoint(self, p_T: WaveFunction, psi_traj: Trajectory, control: ControlField):
        """Propagate the co-state backward along a stored forward trajectory."""
        self._check_control(control)
        if psi_traj.states is None:
            raise ValueError("adjoint propagation needs a stored forward trajectory")
        if psi_traj.time_grid != self.time_grid or psi_traj.grid != self.grid:
            raise GridMismatchError("trajectory does not match the propagator grids")
        if p_T.grid != self.grid:
            raise GridMismatchError("terminal co-state is on a different grid")
        kappa, dt = self.phys.kappa, self.time_grid.dt
        inv = self._half_inv
        fft, ifft = np.fft.fft, np.fft.ifft
        back_phases = np.conj(self.potential_phases(control))
        # half-stepped forward states, one per step
        phis = self._kin(psi_traj.states[:-1], self._half)
        n_steps = self.time_grid.n_steps
        p = p_T.amplitudes.copy()
        costates = np.empty((n_steps + 1, self.grid.n_points), dtype=complex)
        costates[n_steps] = p
        two_kdt = 2.0 * kappa * dt
        for n in range(n_steps - 1, -1, -1):
            b = ifft(inv * fft(p))
            phi = phis[n]
            if kappa:
                b = b * back_phases[n] * np.exp(1j * kappa * dt * (phi.real**2 + phi.imag**2))
                b = b + 2j * two_kdt * 0.5 * (b.real * phi.real + b.imag * phi.imag) * phi
            else:
                b = b * back_phases[n]
            p = ifft(inv * fft(b))
            costates[n] = p
        self.counter.n_backward += 1
        return Trajectory(self.grid, self.time_grid, p, costates, Role.COSTATE)

    def step_overlaps(self, psi_traj: Trajectory, p_traj: Trajectory, control: ControlField):
        r"""``Re<p|dV/dlam|psi>`` at the potential sub-step of every time step.

        Both fields are taken between the potential kick and the second
        kinetic half step, where the control acts.
        """
        chi = self._kin(psi_traj.states[1:], self._half_inv)
        pchi = self._kin(p_traj.states[1:], self._half_inv)
        dv = self.midstep_dv(control)
        return np.sum((pchi.real * chi.real + pchi.imag * chi.imag) * dv, axis=1) * self.grid.dx


def _propagator(psi, control, potential, phys, counter, config):
    return SplitStepPropagator(psi.grid, control.time_grid, potential, phys, counter, config)


def propagate_forward(
    psi0: WaveFunction,
    control: ControlField,
    potential: PotentialFamily,
    phys: PhysicalParams,
    store_trajectory: bool = True,
    counter: Optional[EquationCounter] = None,
    config: Optional[PropagatorConfig] = None,
) -> Trajectory:
    """Solve the Gross-Pitaevskii equation on ``[0, T]`` under ``control``."""
    prop = _propagator(psi0, control, potential, phys, counter, config)
    return prop.forward(psi0, control, store_trajectory)


def propagate_backward(psi_T, control, potential, phys, store_trajectory=True):
    """Undo :func:`propagate_forward`: integrate the same equation from ``T`` to ``0``."""
    prop = _propagator(psi_T, control, potential, phys, None, None)
    return prop.backward(psi_T, control, store_trajectory)


def adjoint_terminal_condition(psi_T: WaveFunction, psi_d: WaveFunction) -> WaveFunction:
    """``p(T) = i <psi_d|psi(T)> psi_d``."""
    overlap = inner_product(psi_d, psi_T)
    return WaveFunction(psi_d.grid, 1j * overlap * psi_d.amplitudes, Role.COSTATE)


def propagate_adjoint(
    p_T: WaveFunction,
    psi_traj: Trajectory,
    control: ControlField,
    potential: PotentialFamily,
    phys: PhysicalParams,
    counter: Optional[EquationCounter] = None,
    config: Optional[PropagatorConfig] = None,
) -> Trajectory:
    """Solve the co-state equation backward from ``p_T`` along ``psi_traj``."""
    prop = _propagator(p_T, control, potential, phys, counter, config)
    return prop.adjoint(p_T, psi_traj, control)


def step_overlaps(psi_traj, p_traj, control, potential, phys) -> np.ndarray:
    prop = SplitStepPropagator(psi_traj.grid, control.time_grid, potential, phys)
    return prop.step_overlaps(psi_traj, p_traj, control)


# -- stationary states ---------------------------------------------------


def kinetic_matrix(grid: SpatialGrid, mass: float) -> np.ndarray:
    """Dense Fourier-spectral matrix of ``-(1/2M) d^2/dx^2``."""
    kin = grid.wavenumbers**2 / (2.0 * mass)
    eye = np.eye(grid.n_points)
    mat = np.fft.ifft(kin[:, None] * np.fft.fft(eye, axis=0), axis=0).real
    return 0.5 * (mat + mat.T)


def _apply_kinetic(psi, grid, mass):
    kin = grid.wavenumbers**2 / (2.0 * mass)
    return np.fft.ifft(kin * np.fft.fft(psi))


def energy(psi: WaveFunction, v: np.ndarray, phys: PhysicalParams) -> float:
    """Gross-Pitaevskii energy functional per particle."""
    a = psi.amplitudes
    dens = np.abs(a) ** 2
    kin = np.vdot(a, _apply_kinetic(a, psi.grid, phys.mass)).real
    return float((kin + np.sum((v + 0.5 * phys.kappa * dens) * dens)) * psi.grid.dx)


def chemical_potential(psi: WaveFunction, v: np.ndarray, phys: PhysicalParams) -> float:
    a = psi.amplitudes
    dens = np.abs(a) ** 2
    kin = np.vdot(a, _apply_kinetic(a, psi.grid, phys.mass)).real
    return float((kin + np.sum((v + phys.kappa * dens) * dens)) * psi.grid.dx)


def _residual(a, v, grid, phys):
    dens = np.abs(a) ** 2
    h_psi = _apply_kinetic(a, grid, phys.mass) + (v + phys.kappa * dens) * a
    mu = np.vdot(a, h_psi).real * grid.dx
    return float(np.max(np.abs(h_psi - mu * a))), mu


def _mirror_index(grid):
    return (-np.arange(grid.n_points)) % grid.n_points


def _is_symmetric(grid, v):
    if not np.isclose(grid.x_min, -grid.x_max):
        return False
    return np.allclose(v, v[_mirror_index(grid)], rtol=1e-12, atol=1e-12 * np.max(np.abs(v)))


def _imaginary_time(a, v, grid, phys, dtau, max_steps, project=None, parity=None, tol=1e-13):
    """Normalized imaginary-time split-step relaxation.

    Stops once the chemical potential changes by less than ``tol``
    (relative) between checks, or after ``max_steps`` steps.
    """
    half = np.exp(-0.5 * dtau * grid.wavenumbers**2 / (2.0 * phys.mass))
    vshift = v - np.min(v)
    mirror = _mirror_index(grid)
    dx = grid.dx
    mu_old = np.inf
    for step in range(max_steps):
        a = np.fft.ifft(half * np.fft.fft(a))
        a = a * np.exp(-dtau * (vshift + phys.kappa * np.abs(a) ** 2))
        a = np.fft.ifft(half * np.fft.fft(a))
        if project is not None:
            a = a - np.vdot(project, a) * dx * project
        if parity is not None:
            a = 0.5 * (a + parity * a[mirror])
        a = a / np.sqrt(np.sum(np.abs(a) ** 2) * dx)
        if step % 50 == 49:
            _, mu = _residual(a, v, grid, phys)
            if abs(mu - mu_old) <= tol * max(1.0, abs(mu)):
                break
            mu_old = mu
    return a


def _pick(cand, a, dx, parity, mirror, order, first):
    if parity is not None:
        score = parity * np.real(np.sum(cand * np.conj(cand[mirror]), axis=0)) * dx
        cand = cand[:, score > 0.5]
    if first and parity is None:
        return cand[:, order]
    ov = np.abs(np.conj(cand).T @ a) * dx
    return cand[:, int(np.argmax(ov))]


def _finish(new, a, dx, parity, mirror):
    # align the global phase with the previous iterate, then normalize
    new = new * np.exp(-1j * np.angle(np.vdot(new, a))) if np.vdot(new, a) != 0 else new
    if parity is not None:
        new = 0.5 * (new + parity * new[mirror])
    return new / np.sqrt(np.sum(np.abs(new) ** 2) * dx)


def _self_consistent(a, v, grid, phys, order, tol, max_iter, parity=None, time_step=None):
    """Polish a stationary state by iterating on the mean-field problem.

    Without ``time_step`` the state is replaced by the eigenvector of the
    discretized mean-field Hamiltonian ``H[|psi|^2]`` it overlaps most with.
    With ``time_step`` the eigenvector of the one-step split-step
    propagator is used instead, which makes the state exactly stationary
    under :class:`SplitStepPropagator` with that step. The density fed
    back into the mean field is Anderson-mixed.
    """
    dx = grid.dx
    mirror = _mirror_index(grid)
    tmat = kinetic_matrix(grid, phys.mass)
    if time_step is not None:
        kin = grid.wavenumbers**2 / (2.0 * phys.mass)
        eye = np.eye(grid.n_points)
        khalf = np.fft.ifft(np.exp(-0.5j * time_step * kin)[:, None] * np.fft.fft(eye, axis=0), axis=0)
        khalf = 0.5 * (khalf + khalf.T)

    def density_of(state):
        if time_step is None:
            return np.abs(state) ** 2
        return np.abs(khalf @ state) ** 2

    def solve(dens, prev, first):
        pot = v + phys.kappa * dens
        if time_step is None:
            _, vecs = np.linalg.eigh(tmat + np.diag(pot))
            cand = vecs[:, : min(grid.n_points, order + 4)].astype(complex) / np.sqrt(dx)
        else:
            u = khalf @ (np.exp(-1j * time_step * pot)[:, None] * khalf)
            _, vecs = np.linalg.eig(u)
            cand = vecs / np.sqrt(np.sum(np.abs(vecs) ** 2, axis=0) * dx)
        return _finish(_pick(cand, prev, dx, parity, mirror, order, first), prev, dx, parity, mirror)

    def converged(state):
        if time_step is None:
            residual, mu = _residual(state, v, grid, phys)
            return residual, residual <= tol * max(1.0, abs(mu))
        residual = _stationary_step_residual(state, v, grid, phys, time_step)
        return residual, residual <= tol

    dens = density_of(a)
    a = solve(dens, a, time_step is None)
    if phys.kappa == 0:
        return a
    beta, depth = 0.5, 6
    xs, rs = [], []
    residual = np.inf
    for _ in range(max_iter):
        residual, done = converged(a)
        if done:
            return a
        r = density_of(a) - dens
        xs.append(dens)
        rs.append(r)
        if len(xs) > depth + 1:
            xs.pop(0)
            rs.pop(0)
        if len(xs) > 1:
            dX = np.array([xs[i + 1] - xs[i] for i in range(len(xs) - 1)]).T
            dR = np.array([rs[i + 1] - rs[i] for i in range(len(rs) - 1)]).T
            coef, *_ = np.linalg.lstsq(dR, r, rcond=None)
            dens = dens + beta * r - (dX + beta * dR) @ coef
        else:
            dens = dens + beta * r
        dens = np.clip(dens, 0.0, None)
        a = solve(dens, a, False)
    raise StationaryStateError(
        f"self-consistent iteration did not converge in {max_iter} iterations", residual
    )


def _initial_guess(grid, v):
    x = grid.x
    width = 0.1 * (grid.x_max - grid.x_min)
    centre = 0.0 if grid.x_min < 0 < grid.x_max else x[np.argmin(v)]
    return np.exp(-0.5 * ((x - centre) / width) ** 2).astype(complex)


def _check_converged(a, v, grid, phys, residual_tol, what):
    residual, mu = _residual(a, v, grid, phys)
    if residual > residual_tol * max(1.0, abs(mu)):
        raise StationaryStateError(f"{what} did not converge", residual)


def _stationary_step_residual(a, v, grid, phys, time_step):
    prop_half = np.exp(-0.5j * time_step * grid.wavenumbers**2 / (2.0 * phys.mass))
    phi = np.fft.ifft(prop_half * np.fft.fft(a))
    phi = phi * np.exp(-1j * time_step * (v + phys.kappa * np.abs(phi) ** 2))
    out = np.fft.ifft(prop_half * np.fft.fft(phi))
    phase = np.vdot(a, out) * grid.dx
    return float(np.max(np.abs(out - phase * a)))


def ground_state(
    potential: PotentialFamily,
    lam: float,
    phys: PhysicalParams,
    grid: SpatialGrid,
    *,
    time_step: Optional[float] = None,
    dtau: float = 2e-3,
    relax_steps: int = 20000,
    tol: float = 1e-11,
    max_iter: int = 300,
    residual_tol: float = 1e-6,
) -> WaveFunction:
    """Ground state of the Gross-Pitaevskii equation at fixed ``lam``.

    Imaginary-time split-step relaxation followed by a self-consistent
    diagonalization polish that removes the relaxation's time-step bias.
    Pass the propagation ``time_step`` to get the state that is stationary
    under the split-step propagator itself (it differs from the
    continuous-time state by the splitting error, O(dt**2)).
    """
    v = potential.value(grid.x, float(lam))
    parity = 1.0 if _is_symmetric(grid, v) else None
    a = _initial_guess(grid, v)
    a /= np.sqrt(np.sum(np.abs(a) ** 2) * grid.dx)
    a = _imaginary_time(a, v, grid, phys, dtau, relax_steps, parity=parity)
    a = _self_consistent(a, v, grid, phys, 0, tol, max_iter, parity=parity)
    _check_converged(a, v, grid, phys, residual_tol, "ground state")
    if time_step is not None:
        a = _self_consistent(a, v, grid, phys, 0, tol, max_iter, parity=parity, time_step=time_step)
        residual = _stationary_step_residual(a, v, grid, phys, time_step)
        if residual > 1e-9:
            raise StationaryStateError("split-step stationary state did not converge", residual)
    return WaveFunction(grid, a, Role.STATE)


def excited_state(
    potential: PotentialFamily,
    lam: float,
    phys: PhysicalParams,
    grid: SpatialGrid,
    order: int = 1,
    *,
    time_step: Optional[float] = None,
    dtau: float = 2e-3,
    relax_steps: int = 20000,
    tol: float = 1e-11,
    max_iter: int = 300,
    residual_tol: float = 1e-6,
) -> WaveFunction:
    """First excited stationary state at fixed ``lam``.

    Relaxed in imaginary time while projecting out the ground state (and
    imposing odd parity for symmetric potentials), then polished like
    :func:`ground_state`.
    """
    if order != 1:
        raise NotImplementedError("only the first excited state is supported")
    v = potential.value(grid.x, float(lam))
    ground = ground_state(potential, lam, phys, grid, time_step=time_step, dtau=dtau,
                          relax_steps=relax_steps, tol=tol, max_iter=max_iter,
                          residual_tol=residual_tol)
    symmetric = _is_symmetric(grid, v)
    parity = -1.0 if symmetric else None
    x = grid.x
    a = (x - np.sum(x * ground.density) * grid.dx) * ground.amplitudes
    a /= np.sqrt(np.sum(np.abs(a) ** 2) * grid.dx)
    a = _imaginary_time(a, v, grid, phys, dtau, relax_steps,
                        project=ground.amplitudes, parity=parity)
    a = _self_consistent(a, v, grid, phys, 1, tol, max_iter, parity=parity)
    _check_converged(a, v, grid, phys, residual_tol, "excited state")
    if time_step is not None:
        a = _self_consistent(a, v, grid, phys, 1, tol, max_iter, parity=parity, time_step=time_step)
        residual = _stationary_step_residual(a, v, grid, phys, time_step)
        if residual > 1e-9:
            raise StationaryStateError("split-step stationary state did not converge", residual)
    if not symmetric:
        # orthogonality to the nonlinear ground state is not automatic here
        a = a - np.vdot(ground.amplitudes, a) * grid.dx * ground.amplitudes
        a /= np.sqrt(np.sum(np.abs(a) ** 2) * grid.dx)
    return WaveFunction(grid, a, Role.STATE)


def count_nodes(psi: WaveFunction, rel_threshold: float = 1e-3) -> int:
    """Number of sign changes of the (phase-aligned) real part.

    Points where the density is below ``rel_threshold`` times its maximum
    are ignored so numerical noise in the tails does not count.
    """
    a = psi.amplitudes
    idx = np.argmax(np.abs(a))
    real = (a * np.exp(-1j * np.angle(a[idx]))).real
    keep = np.abs(real) > rel_threshold * np.max(np.abs(real))
    signs = np.sign(real[keep])
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


# -- trajectory files ------------------------------------------------------


def save_trajectory(traj: Trajectory, directory, stem: str = "density", stride: int = 1) -> tuple:
    """Write ``|psi(x, t)|^2`` as raw little-endian float64 plus a JSON sidecar.

    Every ``stride``-th time node is kept; the final node is always included.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if stride < 1:
        raise ValueError("stride must be at least 1")
    keep = np.arange(0, traj.time_grid.n_nodes, stride)
    if keep[-1] != traj.time_grid.n_steps:
        keep = np.append(keep, traj.time_grid.n_steps)
    dens = np.ascontiguousarray(traj.densities[keep], dtype="<f8")
    bin_path = directory / f"{stem}.bin"
    meta_path = directory / f"{stem}.meta.json" if stem != "density" else directory / "meta.json"
    dens.tofile(bin_path)
    meta = {
        "file": bin_path.name,
        "dtype": "<f8",
        "shape": list(dens.shape),
        "order": "C",
        "axes": ["t", "x"],
        "x_min": traj.grid.x_min,
        "x_max": traj.grid.x_max,
        "n_points": traj.grid.n_points,
        "dx": traj.grid.dx,
        "t_final": traj.time_grid.t_final,
        "n_steps": traj.time_grid.n_steps,
        "dt": traj.time_grid.dt,
        "t": [float(v) for v in traj.time_grid.t[keep]],
        "units": {"x": "um", "t": "ms", "density": "1/um"},
    }
    meta_path.write_text(json.dumps(meta, indent=2))
    return bin_path, meta_path


def load_trajectory(meta_path) -> tuple:
    """Read a density map written by :func:`save_trajectory`."""
    meta_path = Path(meta_path)
    meta = json.loads(meta_path.read_text())
    data = np.fromfile(meta_path.parent / meta["file"], dtype=meta["dtype"])
    return data.reshape(meta["shape"]), meta
