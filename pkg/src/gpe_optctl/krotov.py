r"""Krotov's sequential optimizer and the Krotov-to-GRAPE hybrid.

One iteration solves the adjoint equation along the current trajectory,
then sweeps forward in time, updating the control and propagating the
state under the updated control at the same time:

.. math::

    \lambda^{(i+1)}(t) = \lambda^{(i)}(t) + S(t)\,
        \Re\langle p^{(i)}(t)|\partial_\lambda V|\psi^{(i+1)}(t)\rangle .

``explicit`` mode evaluates :math:`\partial_\lambda V` at the old control;
``newton`` mode solves the implicit equation with the derivative at the
new control by Newton iteration.

Discretization: the value at node ``n + 1`` is computed from ``p`` and the
new ``psi`` at node ``n``, i.e. just before the step that needs it. Every
step is then propagated with its final midpoint control, so the swept
trajectory is exactly the propagation of the returned control.

The second-order (``sigma``) term of the full update is not included.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .functionals import krotov_penalty, make_shape, KrotovCostParams
from .grape import GrapeConfig, optimize_grape
from .grid import ControlField
from .dynamics import Trajectory
from .trace import RunTrace

__all__ = [
    "AdaptiveK",
    "KrotovConfig",
    "SweepResult",
    "krotov_sweep",
    "krotov_update_explicit",
    "krotov_update_newton",
    "newton_residuals",
    "optimize_krotov",
    "optimize_hybrid",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdaptiveK:
    """Grow ``k`` by ``growth`` per iteration until one iteration lowers ``J_T``
    by at least ``target`` (relative), then keep it fixed."""

    k0: float = 1e-4
    growth: float = 1.5
    target: float = 0.025

    def __post_init__(self):
        if not self.k0 > 0 or not self.growth > 1:
            raise ValueError("adaptive k needs k0 > 0 and growth > 1")
        if not 0 < self.target < 1:
            raise ValueError("target decrease must lie in (0, 1)")


@dataclass(frozen=True)
class KrotovConfig:
    k: float = 1e-3
    shape: str = "sine_ramp"
    ramp_fraction: float = 0.1
    update_mode: str = "explicit"
    newton_tol: float = 1e-6
    newton_max_iter: int = 50
    adaptive: Optional[AdaptiveK] = None
    max_equations: int = 1500
    max_iterations: Optional[int] = None
    stop_JT: float = 1e-3
    snapshot_every: int = 1
    max_increases: int = 3
    max_halvings: int = 3
    sigma: Optional[float] = None  # reserved for the second-order term

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.update_mode not in ("explicit", "newton"):
            raise ValueError(f"unknown update_mode {self.update_mode!r}")
        if isinstance(self.adaptive, dict):
            object.__setattr__(self, "adaptive", AdaptiveK(**self.adaptive))
        if self.sigma is not None:
            raise NotImplementedError("the sigma(t) second-order term is not implemented")

    def to_dict(self):
        return asdict(self)


@dataclass
class SweepResult:
    control: ControlField
    trajectory: Trajectory
    newton_iterations: np.ndarray
    fallbacks: int


def krotov_sweep(problem, control: ControlField, costraj: Trajectory, S: np.ndarray,
                 mode: str = "explicit", eps: float = 1e-6, max_newton: int = 50) -> SweepResult:
    """One forward sweep: new control and the state trajectory it produces."""
    grid, tg = problem.grid, problem.time_grid
    if costraj.states is None:
        raise ValueError("the sweep needs the stored co-state trajectory")
    prop = problem.propagator
    pot = problem.potential
    x, dx, dt = grid.x, grid.dx, tg.dt
    kdt = problem.phys.kappa * dt
    half = prop._half
    fft, ifft = np.fft.fft, np.fft.ifft
    old = control.values
    new = old.copy()
    S = np.asarray(S, dtype=float)
    if control.fixed_endpoints:
        S = S.copy()
        S[0] = S[-1] = 0.0
    p = costraj.states
    n_steps = tg.n_steps
    states = np.empty((n_steps + 1, grid.n_points), dtype=complex)
    psi = problem.psi0.amplitudes.copy()
    states[0] = psi
    newton_its = np.zeros(n_steps + 1, dtype=int)
    fallbacks = 0

    def overlap(pn, dv, psin):
        return np.sum((pn.real * psin.real + pn.imag * psin.imag) * dv) * dx

    def update(n_node, pn, psin):
        nonlocal fallbacks
        s = S[n_node]
        if s == 0.0:
            return old[n_node], 0
        lam0 = old[n_node] + s * overlap(pn, pot.first(x, old[n_node]), psin)
        if mode == "explicit":
            return lam0, 0
        for it in range(1, max_newton + 1):
            f = lam0 - old[n_node] - s * overlap(pn, pot.first(x, lam0), psin)
            fp = 1.0 - s * overlap(pn, pot.second(x, lam0), psin)
            if abs(fp) < 1e-12:
                fallbacks += 1
                return old[n_node] + s * overlap(pn, pot.first(x, old[n_node]), psin), it
            delta = -f / fp
            lam0 = lam0 + delta
            if abs(delta) < eps:
                return lam0, it
        return lam0, max_newton

    new[0], newton_its[0] = update(0, p[0], psi)
    for n in range(n_steps):
        new[n + 1], newton_its[n + 1] = update(n + 1, p[n], psi)
        lam_mid = 0.5 * (new[n] + new[n + 1])
        phase = np.exp(-1j * dt * pot.value(x, lam_mid))
        phi = ifft(half * fft(psi))
        if kdt:
            phi = phi * phase * np.exp(-1j * kdt * (phi.real**2 + phi.imag**2))
        else:
            phi = phi * phase
        psi = ifft(half * fft(phi))
        states[n + 1] = psi
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("Krotov update produced non-finite control values")
    problem.counter.n_forward += 1
    prop._check_norm(np.sum(np.abs(states) ** 2, axis=1) * dx, problem.psi0.norm)
    traj = Trajectory(grid, tg, psi, states)
    return SweepResult(control.with_values(new), traj, newton_its, fallbacks)


def krotov_update_explicit(problem, control, costraj, S) -> SweepResult:
    return krotov_sweep(problem, control, costraj, S, "explicit")


def krotov_update_newton(problem, control, costraj, S, eps=1e-6) -> SweepResult:
    return krotov_sweep(problem, control, costraj, S, "newton", eps)


def newton_residuals(problem, old: ControlField, new: ControlField, costraj, sweep_traj, S) -> np.ndarray:
    """Residual of the implicit update equation at every node, for checking."""
    x, dx = problem.grid.x, problem.grid.dx
    pot = problem.potential
    S = np.asarray(S, dtype=float).copy()
    if old.fixed_endpoints:
        S[0] = S[-1] = 0.0
    p, psi = costraj.states, sweep_traj.states
    res = np.zeros(old.values.size)
    for m in range(old.values.size):
        src = max(m - 1, 0)
        dv = pot.first(x, new.values[m])
        ov = np.sum((p[src].real * psi[src].real + p[src].imag * psi[src].imag) * dv) * dx
        res[m] = new.values[m] - old.values[m] - S[m] * ov
    return res


def optimize_krotov(problem, guess: ControlField, config: KrotovConfig,
                    trace: Optional[RunTrace] = None, iteration_offset: int = 0):
    """Iterate adjoint solve plus sequential forward sweep.

    Returns ``(control, trace)``. Each iteration costs two solved
    equations. Stops at ``stop_JT``, at the equation budget, after
    ``max_iterations`` or when repeated increases of ``J`` survive
    ``max_halvings`` halvings of ``k``.
    """
    trace = trace if trace is not None else RunTrace()
    counter = problem.counter
    budget_end = counter.n_total + config.max_equations
    shape = make_shape(config.shape, config.ramp_fraction, problem.time_grid)
    k = config.adaptive.k0 if config.adaptive is not None else config.k
    frozen = config.adaptive is None

    control = guess.copy()
    traj = problem.forward(control, store_trajectory=True)
    jt = problem.terminal_cost(traj)
    J = jt
    trace.log_equation(counter, "forward", jt)
    trace.add_row(counter, iteration_offset, "krotov", jt, 0.0, k=k, update_mode=config.update_mode)
    trace.snapshot(iteration_offset, control.values)

    def finish(status):
        trace.status = status
        trace.final_control = control.values.copy()
        trace.final_density = np.abs(traj.final) ** 2
        trace.desired_density = problem.psi_d.density
        return control, trace

    it = 0
    increases = halvings = 0
    while True:
        if jt <= config.stop_JT:
            return finish("converged")
        if config.max_iterations is not None and it >= config.max_iterations:
            return finish("max_iterations")
        if counter.n_total + 2 > budget_end:
            return finish("budget")
        costraj = problem.adjoint(traj, control)
        trace.log_equation(counter, "adjoint", jt)
        params = KrotovCostParams(k, shape)
        sweep = krotov_sweep(problem, control, costraj, params.S, config.update_mode,
                             config.newton_tol, config.newton_max_iter)
        jt_new = problem.terminal_cost(sweep.trajectory)
        pen = krotov_penalty(sweep.control, control, params)
        J_new = jt_new + pen
        trace.log_equation(counter, "forward", jt_new)
        it += 1
        flags = []
        if sweep.fallbacks:
            flags.append(f"newton_fallback={sweep.fallbacks}")
        if not frozen:
            if (jt - jt_new) >= config.adaptive.target * jt:
                frozen = True
                flags.append("k_frozen")
                trace.events.append(f"iteration {it}: k frozen at {k!r}")
        if J_new > J:
            increases += 1
        else:
            increases = 0
        used_k = k
        control, traj, jt, J = sweep.control, sweep.trajectory, jt_new, J_new
        active = sweep.newton_iterations[params.S > 0] if config.update_mode == "newton" else None
        trace.add_row(
            counter, iteration_offset + it, "krotov", jt, pen, k=used_k,
            update_mode=config.update_mode,
            newton_mean=float(active.mean()) if active is not None and active.size else None,
            newton_max=int(active.max()) if active is not None and active.size else None,
            flags=";".join(flags),
        )
        if config.snapshot_every and it % config.snapshot_every == 0:
            trace.snapshot(iteration_offset + it, control.values)
        if not frozen:
            k *= config.adaptive.growth
        if increases > config.max_increases:
            if halvings >= config.max_halvings:
                trace.events.append(f"iteration {it}: J kept increasing after {halvings} halvings of k")
                return finish("diverged")
            k *= 0.5
            halvings += 1
            increases = 0
            trace.events.append(f"iteration {it}: J increased repeatedly, k halved to {k!r}")


def optimize_hybrid(problem, guess: ControlField, krotov_config: KrotovConfig,
                    grape_config: GrapeConfig, switch_after: Optional[int],
                    max_equations: Optional[int] = None):
    """Run Krotov for ``switch_after`` iterations, then continue with GRAPE.

    GRAPE starts from the Krotov control with a fresh Hessian estimate.
    ``switch_after=0`` is plain GRAPE, ``switch_after=None`` plain Krotov.
    The overall equation budget defaults to GRAPE's.
    """
    total = max_equations if max_equations is not None else grape_config.max_equations
    start = problem.counter.n_total
    if switch_after == 0:
        return optimize_grape(problem, guess, _with_budget(grape_config, total))
    kcfg = _with_budget(krotov_config, total, max_iterations=switch_after)
    control, trace = optimize_krotov(problem, guess, kcfg)
    if switch_after is None or trace.status != "max_iterations":
        return control, trace
    remaining = total - (problem.counter.n_total - start)
    if remaining < 3:
        trace.status = "budget"
        return control, trace
    trace.events.append(f"switching to GRAPE after {switch_after} Krotov iterations")
    last_iteration = trace.rows[-1]["iteration"]
    control, trace = optimize_grape(problem, control, _with_budget(grape_config, remaining),
                                    trace=trace, iteration_offset=last_iteration + 1)
    return control, trace


def _with_budget(config, budget, **changes):
    from dataclasses import replace

    return replace(config, max_equations=budget, **changes)
