r"""GRAPE optimizers: concurrent updates from forward/adjoint trajectories.

The cost is

.. math::

    J = J_T + \frac{\gamma}{2}\int_0^T \dot\lambda^2\,dt ,

and its search direction is either the :math:`L^2` gradient
:math:`-\gamma\ddot\lambda - \Re\langle p|\partial_\lambda V|\psi\rangle`
or the :math:`H^1` gradient, obtained from the former by a Dirichlet
Poisson solve in time. Search directions are built by Polak-Ribiere
conjugate gradients or by dense BFGS whose initial inverse Hessian is the
inverse Gram matrix of the chosen norm (i.e. BFGS carried out in that
inner product). Each direction is followed by a line search that only
needs forward solves; the adjoint is solved once per accepted step.

Optimization variables are the interior node values; the two endpoint
values are never changed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .functionals import grape_penalty, grape_penalty_gradient, second_difference
from .grid import ControlField
from .trace import RunTrace

__all__ = [
    "LineSearchConfig",
    "GrapeConfig",
    "GradientField",
    "gradient_L2",
    "gradient_H1",
    "poisson_dirichlet",
    "optimize_grape",
]

logger = logging.getLogger(__name__)

_GOLDEN = 0.5 * (3.0 - np.sqrt(5.0))


@dataclass(frozen=True)
class LineSearchConfig:
    """Settings of the value-based line search.

    ``first_step`` is the largest change of any control value on the very
    first trial of a fresh search direction (steepest-descent steps have no
    natural scale). ``bracket_tol`` is the relative bracket width at which
    the minimum along the line is considered located.
    """

    c1: float = 1e-4
    c2: float = 0.9
    max_trials: int = 20
    first_step: float = 0.05
    expand: float = 2.0
    bracket_tol: float = 0.1

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("Wolfe constants must satisfy 0 < c1 < c2 < 1")
        if self.max_trials < 2:
            raise ValueError("max_trials must be at least 2")


@dataclass(frozen=True)
class GrapeConfig:
    search: str = "bfgs"
    norm: str = "H1"
    gamma: float = 1e-6
    line_search: LineSearchConfig = field(default_factory=LineSearchConfig)
    max_equations: int = 1500
    stop_JT: float = 1e-3
    snapshot_every: int = 1
    cg_restart: Optional[int] = None

    def __post_init__(self):
        if self.search not in ("conjugate_gradient", "bfgs"):
            raise ValueError(f"unknown search {self.search!r}")
        if self.norm not in ("L2", "H1"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.max_equations <= 0:
            raise ValueError("max_equations must be positive")
        if isinstance(self.line_search, dict):
            object.__setattr__(self, "line_search", LineSearchConfig(**self.line_search))

    def to_dict(self):
        return asdict(self)


@dataclass
class GradientField:
    values: np.ndarray
    norm_kind: str


def poisson_dirichlet(rhs: np.ndarray, dt: float) -> np.ndarray:
    """Solve ``-u'' = rhs`` on the time nodes with ``u = 0`` at both ends.

    Only interior ``rhs`` values are used; the returned array has the same
    length as ``rhs``.
    """
    n = rhs.size - 2
    out = np.zeros_like(rhs, dtype=float)
    if n <= 0:
        return out
    bands = np.empty((3, n))
    bands[0] = -1.0
    bands[1] = 2.0
    bands[2] = -1.0
    out[1:-1] = solve_banded((1, 1), bands, dt**2 * rhs[1:-1])
    return out


def gradient_L2(control: ControlField, psi_traj, p_traj, problem, gamma: float) -> GradientField:
    r"""``-gamma * lam'' - Re<p|dV/dlam|psi>`` at interior nodes, zero at the ends.

    The overlap term is the per-step overlap averaged onto the nodes; with
    this placement ``sum(grad * delta) * dt`` is the exact directional
    derivative of the discretized cost for perturbations that vanish at
    the endpoints.
    """
    if psi_traj.states is None or p_traj.states is None:
        raise ValueError("gradient needs stored forward and adjoint trajectories")
    if psi_traj.time_grid != control.time_grid or p_traj.time_grid != control.time_grid:
        raise ValueError("trajectories do not match the control's time grid")
    ov = problem.step_overlaps(psi_traj, p_traj, control)
    grad = np.zeros(control.values.size)
    grad[1:-1] = -0.5 * (ov[:-1] + ov[1:])
    grad[1:-1] -= gamma * second_difference(control.values, control.time_grid.dt)[1:-1]
    return GradientField(grad, "L2")


def gradient_H1(rhs, dt: Optional[float] = None) -> GradientField:
    """Turn an L2 gradient into the H1 one by solving ``-G'' = rhs``, ``G(0) = G(T) = 0``."""
    if isinstance(rhs, GradientField):
        rhs = rhs.values
    if dt is None:
        raise ValueError("dt is required")
    return GradientField(poisson_dirichlet(np.asarray(rhs, dtype=float), dt), "H1")


class _Metric:
    """Gram matrix of the L2 or H1 inner product on interior nodes."""

    def __init__(self, norm: str, n: int, dt: float):
        self.norm, self.n, self.dt = norm, n, dt

    def riesz(self, g):
        """Representer of the discrete derivative ``g`` in this inner product."""
        if self.norm == "L2":
            return g / self.dt
        bands = np.empty((3, self.n))
        bands[0] = -1.0
        bands[1] = 2.0
        bands[2] = -1.0
        return solve_banded((1, 1), bands, self.dt * g)

    def inverse(self):
        if self.norm == "L2":
            return np.eye(self.n) / self.dt
        return self.riesz(np.eye(self.n))


def _line_search(phi, f0, slope, alpha0, cfg: LineSearchConfig, budget):
    """Locate a minimum of ``phi`` along the search direction.

    Expands or contracts from ``alpha0`` until the minimum is bracketed,
    then refines with safeguarded parabolic steps until the bracket is
    narrower than ``bracket_tol`` relative to the best step. Returns
    ``(alpha, f, payload, n_trials, status)`` for the best trial;
    ``alpha`` is ``0`` when no trial decreased the cost.
    """
    trials = {}

    def ev(alpha):
        f, payload = phi(alpha)
        trials[alpha] = (f, payload)
        return f

    limit = min(cfg.max_trials, budget)
    if limit <= 0:
        return 0.0, f0, None, 0, "budget"
    lo, flo = 0.0, f0
    a = alpha0
    fa = ev(a)
    if fa < f0:
        hi, fhi = None, None
        while len(trials) < limit:
            b = a * cfg.expand
            fb = ev(b)
            if fb >= fa:
                hi, fhi = b, fb
                break
            lo, flo, a, fa = a, fa, b, fb
        if hi is None:
            return _best(trials, f0, "expansion_limit")
    else:
        hi, fhi = a, fa
        while True:
            if len(trials) >= limit:
                return _best(trials, f0, "no_decrease")
            denom = 2.0 * (fhi - f0 - slope * hi)
            a_q = -slope * hi**2 / denom if denom > 0 else 0.5 * hi
            a = float(np.clip(a_q, 0.1 * hi, 0.5 * hi))
            fa = ev(a)
            if fa < f0:
                break
            hi, fhi = a, fa
    # refine the bracket lo < a < hi with flo, fhi > fa
    while len(trials) < limit and (hi - lo) > cfg.bracket_tol * a:
        u = _parabola_vertex(lo, flo, a, fa, hi, fhi)
        left, right = a - lo, hi - a
        if u is None or not (lo < u < hi) or min(abs(u - a), u - lo, hi - u) < 0.01 * (hi - lo):
            u = a + _GOLDEN * right if right > left else a - _GOLDEN * left
        fu = ev(u)
        if fu < fa:
            if u > a:
                lo, flo = a, fa
            else:
                hi, fhi = a, fa
            a, fa = u, fu
        elif u > a:
            hi, fhi = u, fu
        else:
            lo, flo = u, fu
    return _best(trials, f0, "ok")


def _parabola_vertex(x0, f0, x1, f1, x2, f2):
    num = (x1 - x0) ** 2 * (f1 - f2) - (x1 - x2) ** 2 * (f1 - f0)
    den = (x1 - x0) * (f1 - f2) - (x1 - x2) * (f1 - f0)
    if den == 0:
        return None
    return x1 - 0.5 * num / den


def _best(trials, f0, status):
    alpha = min(trials, key=lambda a: trials[a][0])
    f, payload = trials[alpha]
    if not f < f0:
        return 0.0, f0, None, len(trials), "no_decrease"
    return alpha, f, payload, len(trials), status


def optimize_grape(problem, guess: ControlField, config: GrapeConfig, trace: Optional[RunTrace] = None,
                   scheme: str = "grape", iteration_offset: int = 0):
    """Minimize ``J`` by GRAPE with CG or BFGS search directions.

    Returns ``(control, trace)``. Stops when ``J_T <= stop_JT``, when the
    equation budget is spent, or when a line search finds no decrease.
    """
    trace = trace if trace is not None else RunTrace()
    counter = problem.counter
    budget_end = counter.n_total + config.max_equations
    dt = problem.time_grid.dt
    gamma = config.gamma
    ls = config.line_search
    values = guess.values.copy()
    n_int = values.size - 2
    metric = _Metric(config.norm, n_int, dt)

    def make(x):
        v = values.copy()
        v[1:-1] = x
        return guess.with_values(v)

    def cost(control):
        traj = problem.forward(control, store_trajectory=True)
        jt = problem.terminal_cost(traj)
        pen = grape_penalty(control, gamma)
        return jt, pen, traj

    x = values[1:-1].copy()
    control = make(x)
    jt, pen, traj = cost(control)
    J = jt + pen
    trace.log_equation(counter, "forward", jt)
    trace.add_row(counter, iteration_offset, scheme, jt, pen)
    trace.snapshot(iteration_offset, control.values)
    it = 0

    def finish(status):
        trace.status = status
        trace.final_control = control.values.copy()
        trace.final_density = np.abs(traj.final) ** 2
        trace.desired_density = problem.psi_d.density
        return control, trace

    if jt <= config.stop_JT:
        return finish("converged")
    if counter.n_total >= budget_end:
        return finish("budget")

    def full_gradient(control, traj):
        costraj = problem.adjoint(traj, control)
        g = problem.terminal_gradient(traj, costraj, control) + grape_penalty_gradient(control, gamma)
        return g[1:-1]

    g = full_gradient(control, traj)
    trace.log_equation(counter, "adjoint", jt)
    H = None
    d_prev = g_prev = G_prev = None
    alpha_prev = None
    cg_restart = config.cg_restart or n_int
    since_restart = 0
    while True:
        G = metric.riesz(g)
        # search direction
        if config.search == "bfgs":
            if H is None:
                d = -G
            else:
                d = -(H @ g)
                if g @ d >= 0:
                    trace.events.append(f"iteration {it}: BFGS direction not descent, reset")
                    H = None
                    d = -G
        else:
            if d_prev is None or since_restart >= cg_restart:
                d = -G
                since_restart = 0
            else:
                beta = max(0.0, g @ (G - G_prev) / (g_prev @ G_prev))
                d = -G + beta * d_prev
                if g @ d >= 0:
                    d = -G
                    since_restart = 0
        slope = float(g @ d)
        if not slope < 0:
            return finish("zero_gradient")
        fresh = (config.search == "bfgs" and H is None) or (config.search != "bfgs" and d_prev is None)
        if config.search == "bfgs" and H is not None:
            alpha0 = 1.0
        elif fresh or alpha_prev is None:
            alpha0 = ls.first_step / np.max(np.abs(d))
        else:
            alpha0 = alpha_prev * (g_prev @ d_prev) / slope
        last_jt = jt

        def phi(alpha):
            c = make(x + alpha * d)
            jt_a, pen_a, traj_a = cost(c)
            trace.log_equation(counter, "forward", last_jt)
            return jt_a + pen_a, (c, jt_a, pen_a, traj_a)

        remaining = budget_end - counter.n_total
        # keep one solve in reserve for the adjoint of the accepted step
        alpha, J_new, payload, n_trials, status = _line_search(phi, J, slope, alpha0, ls, remaining - 1)
        if payload is None:
            if status == "budget" or counter.n_total >= budget_end:
                return finish("budget")
            trace.events.append(f"iteration {it + 1}: line search failed ({status})")
            return finish("line_search_failed")
        flags = []
        if J_new > J + ls.c1 * alpha * slope:
            flags.append("armijo")
        s = alpha * d
        x = x + s
        control, jt, pen, traj = payload
        J = J_new
        it += 1
        since_restart += 1
        g_new = full_gradient(control, traj)
        trace.log_equation(counter, "adjoint", jt)
        if abs(g_new @ d) > ls.c2 * abs(slope):
            flags.append("curvature")
        y = g_new - g
        if config.search == "bfgs":
            sy = float(s @ y)
            if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
                if H is None:
                    H0 = metric.inverse()
                    H = H0 * (sy / float(y @ H0 @ y))
                rho = 1.0 / sy
                Hy = H @ y
                H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho**2 * float(y @ Hy) + rho) * np.outer(s, s)
            else:
                flags.append("skip_update")
        d_prev, g_prev, G_prev = d, g, G
        alpha_prev = alpha
        g = g_new
        trace.add_row(
            counter, iteration_offset + it, scheme, jt, pen,
            step=alpha, grad_norm=float(np.sqrt(abs(g @ metric.riesz(g)))),
            flags=";".join(flags + ([status] if status != "ok" else [])),
        )
        if config.snapshot_every and it % config.snapshot_every == 0:
            trace.snapshot(iteration_offset + it, control.values)
        if jt <= config.stop_JT:
            return finish("converged")
        if counter.n_total >= budget_end - 1:
            return finish("budget")
