"""Experiment definitions, presets, configuration files and result export.

A run is described by a plain JSON-compatible dictionary::

    {"problem": {...}, "optimizer": {...}, "seed": 0, "output": {...}}

:func:`resolve_config` merges a user configuration onto its preset and
validates it; the resolved dictionary is what gets written to
``run.json`` and re-running it reproduces the run bit for bit.
"""

from __future__ import annotations

import copy
import csv
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import (
    EquationCounter,
    PropagatorConfig,
    count_nodes,
    excited_state,
    ground_state,
    save_trajectory,
)
from .grape import GrapeConfig, LineSearchConfig, optimize_grape
from .grid import (
    ControlField,
    PhysicalParams,
    SpatialGrid,
    TimeGrid,
    WaveFunction,
    power_spectrum,
    spectral_bandwidth,
)
from .krotov import AdaptiveK, KrotovConfig, optimize_hybrid, optimize_krotov
from .potentials import PotentialFamily
from .problem import ControlProblem
from .trace import RunTrace

__all__ = [
    "ConfigError",
    "GuessSpec",
    "ProblemSpec",
    "PRESETS",
    "preset",
    "resolve_config",
    "load_config",
    "apply_overrides",
    "problem_spec_from_config",
    "build_problem",
    "optimizer_from_config",
    "run_experiment",
    "spectral_history",
    "export_results",
    "convergence_self_test",
    "expand_sweep",
    "run_sweep",
]

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Configuration file or override could not be parsed or validated."""


# ---------------------------------------------------------------- presets

_BASE = {
    "grid": {"x_min": -10.0, "x_max": 10.0, "n_points": 256},
    "time": {"t_final": 2.0, "n_steps": 2000},
}

PRESETS = {
    "splitting": {
        "problem": {
            "name": "splitting",
            "potential": {"kind": "splitting_poly", "coefficients": {}, "bounds": None},
            "phys": {"mass": 0.5, "kappa": math.pi / 2},
            **copy.deepcopy(_BASE),
            "initial": {"rule": "ground", "lambda": 0.0},
            "desired": {"rule": "ground", "lambda": 1.0},
            "guess": {"kind": "linear_ramp", "lambda_start": 0.0, "lambda_end": 1.0,
                      "kick": 0.0, "noise": 0.0},
        },
        "optimizer": {"kind": "grape", "grape": {"gamma": 1e-6}, "krotov": {"k": 1e-3}},
    },
    "splitting-strong": {
        "problem": {"name": "splitting-strong", "phys": {"kappa": 2 * math.pi}},
        "base": "splitting",
    },
    "shaking": {
        "problem": {
            "name": "shaking",
            "potential": {"kind": "shaking_shifted", "coefficients": {}, "bounds": None},
            "phys": {"mass": 0.5, "kappa": math.pi / 2},
            **copy.deepcopy(_BASE),
            "initial": {"rule": "ground", "lambda": 0.0},
            "desired": {"rule": "excited", "lambda": 0.0, "order": 1},
            "guess": {"kind": "constant", "lambda_start": 0.0, "lambda_end": 0.0,
                      "kick": 0.1, "noise": 0.0},
        },
        "optimizer": {"kind": "grape", "grape": {"gamma": 1e-6}, "krotov": {"k": 5e-3}},
    },
}

_DEFAULTS = {
    "seed": 0,
    "optimizer": {
        "kind": "grape",
        "grape": {},
        "krotov": {},
        "switch_after": None,
        "max_equations": None,
    },
    "propagator": {"norm_check_tol": 1e-9},
    "output": {"density_stride": 10, "snapshot_every": 1},
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def preset(name: str) -> dict:
    """Fully resolved configuration of a built-in preset."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    entry = copy.deepcopy(PRESETS[name])
    base = entry.pop("base", None)
    cfg = _merge(preset(base), entry) if base else _merge(_DEFAULTS, entry)
    cfg["preset"] = name
    return cfg


def resolve_config(cfg: dict) -> dict:
    """Merge ``cfg`` onto its preset (key ``preset``) and validate the result."""
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a JSON object")
    name = cfg.get("preset", "splitting")
    resolved = _merge(preset(name), cfg)
    resolved.pop("sweep", None)
    try:
        problem_spec_from_config(resolved)
        optimizer_from_config(resolved)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return resolved


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` strings; values are parsed as JSON when possible."""
    out = copy.deepcopy(cfg)
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        parts = key.split(".")
        node = out
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {item!r}: {part!r} is not a section")
            node = nxt
        node[parts[-1]] = _parse_value(raw)
    return out


# ---------------------------------------------------------------- problems


@dataclass(frozen=True)
class GuessSpec:
    """Initial control guess.

    ``linear_ramp`` goes from ``lambda_start`` to ``lambda_end``;
    ``constant`` stays at ``lambda_start``; ``sine_ramp`` rises as
    ``sin^2(pi t / 2T)``. ``kick`` adds ``kick * sin(2 pi t / T)`` and
    ``noise`` adds seeded Gaussian noise, smoothed and vanishing at both
    ends, so the endpoints are always the boundary configurations.
    """

    kind: str = "linear_ramp"
    lambda_start: float = 0.0
    lambda_end: float = 1.0
    kick: float = 0.0
    noise: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear_ramp", "constant", "sine_ramp"):
            raise ConfigError(f"unknown guess kind {self.kind!r}")
        if self.kind == "constant" and self.lambda_end != self.lambda_start:
            raise ConfigError("a constant guess needs lambda_end == lambda_start")

    def values(self, time_grid: TimeGrid, seed: int = 0) -> np.ndarray:
        t, T = time_grid.t, time_grid.t_final
        a, b = self.lambda_start, self.lambda_end
        if self.kind == "linear_ramp":
            lam = a + (b - a) * t / T
        elif self.kind == "constant":
            lam = np.full_like(t, a)
        else:
            lam = a + (b - a) * np.sin(0.5 * np.pi * t / T) ** 2
        if self.kick:
            lam = lam + self.kick * np.sin(2.0 * np.pi * t / T)
        if self.noise:
            rng = np.random.default_rng(seed)
            raw = rng.standard_normal(t.size)
            width = max(1, t.size // 50)
            smooth = np.convolve(raw, np.ones(width) / width, mode="same")
            lam = lam + self.noise * smooth * np.sin(np.pi * t / T)
        lam[0], lam[-1] = a, b
        return lam

    def control(self, time_grid: TimeGrid, seed: int = 0) -> ControlField:
        return ControlField(time_grid, self.values(time_grid, seed))


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    potential: PotentialFamily
    phys: PhysicalParams
    grid: SpatialGrid
    time: TimeGrid
    initial: dict
    desired: dict
    guess: GuessSpec

    def refined(self, space: bool = False, time: bool = False) -> "ProblemSpec":
        from dataclasses import replace

        return replace(
            self,
            grid=self.grid.refined() if space else self.grid,
            time=self.time.refined() if time else self.time,
        )


def _state_rule(rule: dict, what: str) -> dict:
    rule = dict(rule)
    kind = rule.get("rule")
    if kind not in ("ground", "excited"):
        raise ConfigError(f"{what}.rule must be 'ground' or 'excited', got {kind!r}")
    rule["lambda"] = float(rule.get("lambda", 0.0))
    if kind == "excited":
        rule["order"] = int(rule.get("order", 1))
    return rule


def problem_spec_from_config(cfg: dict) -> ProblemSpec:
    p = cfg["problem"]
    try:
        pot_cfg = p["potential"]
        bounds = pot_cfg.get("bounds")
        potential = PotentialFamily(pot_cfg["kind"], dict(pot_cfg.get("coefficients") or {}),
                                    tuple(bounds) if bounds else None)
        phys = PhysicalParams(**p["phys"])
        grid = SpatialGrid(**p["grid"])
        time = TimeGrid(**p["time"])
        guess = GuessSpec(**p["guess"])
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"invalid problem section: {exc}") from exc
    spec = ProblemSpec(
        name=str(p.get("name", cfg.get("preset", "problem"))),
        potential=potential, phys=phys, grid=grid, time=time,
        initial=_state_rule(p["initial"], "initial"),
        desired=_state_rule(p["desired"], "desired"),
        guess=guess,
    )
    if not math.isclose(guess.lambda_start, spec.initial["lambda"]) or not math.isclose(
        guess.lambda_end, spec.desired["lambda"]
    ):
        raise ConfigError("guess endpoints must equal the initial and desired lambda")
    return spec


def _stationary(spec: ProblemSpec, rule: dict, grid=None, time=None) -> WaveFunction:
    grid = grid or spec.grid
    time = time or spec.time
    if rule["rule"] == "ground":
        return ground_state(spec.potential, rule["lambda"], spec.phys, grid, time_step=time.dt)
    return excited_state(spec.potential, rule["lambda"], spec.phys, grid,
                         order=rule["order"], time_step=time.dt)


def build_problem(spec: ProblemSpec, propagator: Optional[dict] = None) -> ControlProblem:
    """Compute the initial and desired states and bundle the control problem.

    Stationary states are made stationary under the split-step propagator
    itself, so an unchanged boundary configuration leaves them unchanged.
    """
    psi0 = _stationary(spec, spec.initial)
    psi_d = _stationary(spec, spec.desired)
    psi0.check_normalized(1e-10)
    psi_d.check_normalized(1e-10)
    config = PropagatorConfig(**(propagator or {}))
    return ControlProblem(spec.grid, spec.time, spec.potential, spec.phys, psi0, psi_d,
                          EquationCounter(), config, spec.name)


def optimizer_from_config(cfg: dict):
    """``(kind, grape_config, krotov_config, switch_after, max_equations)``."""
    o = cfg["optimizer"]
    kind = o.get("kind", "grape")
    if kind not in ("grape", "krotov", "hybrid"):
        raise ConfigError(f"optimizer.kind must be grape, krotov or hybrid, got {kind!r}")
    snap = int(cfg.get("output", {}).get("snapshot_every", 1))
    try:
        g = dict(o.get("grape") or {})
        g.setdefault("snapshot_every", snap)
        if isinstance(g.get("line_search"), dict):
            g["line_search"] = LineSearchConfig(**g["line_search"])
        grape = GrapeConfig(**g)
        k = dict(o.get("krotov") or {})
        k.setdefault("snapshot_every", snap)
        if isinstance(k.get("adaptive"), dict):
            k["adaptive"] = AdaptiveK(**k["adaptive"])
        krotov = KrotovConfig(**k)
    except TypeError as exc:
        raise ConfigError(f"invalid optimizer section: {exc}") from exc
    except NotImplementedError as exc:
        raise ConfigError(str(exc)) from exc
    switch = o.get("switch_after")
    if switch is not None:
        if switch == "inf" or (isinstance(switch, float) and math.isinf(switch)):
            switch = None
        else:
            switch = int(switch)
            if switch < 0:
                raise ConfigError("switch_after must be non-negative")
    if kind == "hybrid" and o.get("switch_after") is None:
        raise ConfigError("a hybrid optimizer needs switch_after")
    budget = o.get("max_equations")
    return kind, grape, krotov, switch, (int(budget) if budget is not None else None)


def run_experiment(cfg: dict, out_dir=None):
    """Resolve ``cfg``, build the problem, optimize, and optionally export.

    Returns ``(problem, control, trace, resolved_config)``.
    """
    resolved = resolve_config(cfg)
    spec = problem_spec_from_config(resolved)
    kind, grape, krotov, switch, budget = optimizer_from_config(resolved)
    problem = build_problem(spec, resolved.get("propagator"))
    guess = spec.guess.control(spec.time, int(resolved.get("seed", 0)))
    logger.info("running %s on %s", kind, spec.name)
    if kind == "grape":
        if budget is not None:
            grape = _replace(grape, max_equations=budget)
        control, trace = optimize_grape(problem, guess, grape)
    elif kind == "krotov":
        if budget is not None:
            krotov = _replace(krotov, max_equations=budget)
        control, trace = optimize_krotov(problem, guess, krotov)
    else:
        control, trace = optimize_hybrid(problem, guess, krotov, grape, switch, budget)
    if trace.rows and trace.rows[-1]["n_total"] != problem.counter.n_total:
        trace.events.append("counter audit: last row does not include the final solves")
    if out_dir is not None:
        export_results(trace, out_dir, problem=problem, control=control, config=resolved)
    return problem, control, trace, resolved


def _replace(config, **changes):
    from dataclasses import replace

    return replace(config, **changes)


# ---------------------------------------------------------------- analysis


def spectral_history(snapshots, dt: float):
    """Power spectra of control snapshots.

    ``snapshots`` is a list of ``(iteration, values)``. Returns
    ``(iterations, nu, power, bandwidth)`` where ``power`` has one row per
    snapshot.
    """
    if not snapshots:
        raise ValueError("spectral_history needs at least one snapshot")
    iterations = np.array([it for it, _ in snapshots], dtype=int)
    rows, widths = [], []
    nu = None
    for _, values in snapshots:
        tg = TimeGrid(dt * (len(values) - 1), len(values) - 1)
        nu, p = power_spectrum(ControlField(tg, values, fixed_endpoints=False))
        rows.append(p)
        widths.append(spectral_bandwidth(nu, p))
    return iterations, nu, np.array(rows), np.array(widths)


def convergence_self_test(spec: ProblemSpec, control_values=None) -> dict:
    """Check the discretization by refining the time and space grids.

    Propagates the initial state under the guess on ``dt``, ``dt/2`` and
    ``dt/4``; ``dt_ratio`` is the ratio of successive differences of the
    final states (4 for a second-order method). ``dx_change`` is the change
    of the final state on the nodes shared with the doubled spatial grid,
    with the states recomputed on that grid.
    """
    from .dynamics import propagate_forward

    fn = control_values or (lambda t: spec.guess.values(TimeGrid(spec.time.t_final, t.size - 1)))
    finals = []
    psi0 = _stationary(spec, spec.initial)
    for level in range(3):
        tg = spec.time
        for _ in range(level):
            tg = tg.refined()
        ctrl = ControlField(tg, fn(tg.t))
        finals.append(propagate_forward(psi0, ctrl, spec.potential, spec.phys,
                                        store_trajectory=False).final)
    d1 = np.linalg.norm(finals[0] - finals[1]) * math.sqrt(spec.grid.dx)
    d2 = np.linalg.norm(finals[1] - finals[2]) * math.sqrt(spec.grid.dx)

    fine_grid = spec.grid.refined()
    psi0_fine = _stationary(spec, spec.initial, grid=fine_grid)
    ctrl = ControlField(spec.time, fn(spec.time.t))
    fine = propagate_forward(psi0_fine, ctrl, spec.potential, spec.phys,
                             store_trajectory=False).final[::2]
    dx_change = np.linalg.norm(fine - finals[0]) * math.sqrt(spec.grid.dx)
    return {
        "dt_diff_coarse": float(d1),
        "dt_diff_fine": float(d2),
        "dt_ratio": float(d1 / d2) if d2 > 0 else math.inf,
        "dx_change": float(dx_change),
    }


# ---------------------------------------------------------------- export


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for v in row])


def export_results(trace: RunTrace, out_dir, problem: Optional[ControlProblem] = None,
                   control: Optional[ControlField] = None, config: Optional[dict] = None):
    """Write the run's files into ``out_dir``.

    ``trace.csv``, ``control.csv`` (``t`` then one column per snapshot),
    ``spectra.csv``, ``timing.csv`` and ``events.txt`` always;
    ``run.json`` when ``config`` is given; ``density.bin`` plus
    ``meta.json`` when ``problem`` and ``control`` are given (one extra
    forward solve, not counted in the trace).
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        trace.write_csv(out / "trace.csv")
        _write_csv(out / "timing.csv", ["iteration", "n_total", "wall_time_s"],
                   [(r["iteration"], r["n_total"], t) for r, t in zip(trace.rows, trace.wall_times)])
        with open(out / "events.txt", "w") as fh:
            fh.write(f"status: {trace.status}\n")
            for event in trace.events:
                fh.write(event + "\n")
        snaps = list(trace.snapshots)
        if control is not None and (not snaps or not np.array_equal(snaps[-1][1], control.values)):
            last = trace.rows[-1]["iteration"] if trace.rows else 0
            snaps.append((last, control.values.copy()))
        if snaps:
            n = len(snaps[0][1])
            dt = problem.time_grid.dt if problem is not None else (
                config["problem"]["time"]["t_final"] / config["problem"]["time"]["n_steps"]
                if config else 1.0 / (n - 1))
            t = dt * np.arange(n)
            header = ["t"] + [f"iter_{it}" for it, _ in snaps]
            _write_csv(out / "control.csv", header,
                       zip(t, *[v for _, v in snaps]))
            iters, nu, power, width = spectral_history(snaps, dt)
            header = ["iteration", "bandwidth"] + [f"P_{i}" for i in range(nu.size)]
            rows = [["nu", ""] + [repr(float(v)) for v in nu]]
            rows += [[int(it), w, *p] for it, w, p in zip(iters, width, power)]
            _write_csv(out / "spectra.csv", header, rows)
        if config is not None:
            with open(out / "run.json", "w") as fh:
                json.dump(config, fh, indent=2, sort_keys=True)
                fh.write("\n")
        if problem is not None and control is not None:
            stride = int((config or {}).get("output", {}).get("density_stride", 10))
            replay = problem.fresh_counter()
            traj = replay.forward(control, store_trajectory=True)
            save_trajectory(traj, out, stride=stride)
    except OSError as exc:
        raise OSError(f"could not write results to {out}: {exc}") from exc
    return out


# ---------------------------------------------------------------- sweeps


def expand_sweep(cfg: dict) -> list:
    """Cross product of ``cfg["sweep"]["axes"]`` (dotted key to list of values).

    Returns ``(label, config)`` pairs; each config has the sweep section
    removed and the axis values applied as overrides.
    """
    sweep = cfg.get("sweep") or {}
    axes = sweep.get("axes") or {}
    if not isinstance(axes, dict):
        raise ConfigError("sweep.axes must map dotted keys to lists of values")
    base = {k: v for k, v in cfg.items() if k != "sweep"}
    keys = list(axes)
    for key in keys:
        if not isinstance(axes[key], list) or not axes[key]:
            raise ConfigError(f"sweep axis {key!r} must be a non-empty list")
    runs = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        overrides = [f"{k}={json.dumps(v)}" for k, v in zip(keys, combo)]
        label = "_".join(f"{k.split('.')[-1]}={_label(v)}" for k, v in zip(keys, combo)) or "run"
        runs.append((label, apply_overrides(base, overrides)))
    return runs


def _label(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value).replace("/", "-")


def _sweep_worker(args):
    label, cfg, out = args
    _, _, trace, _ = run_experiment(cfg, Path(out) / label)
    return label, trace.status, trace.rows[-1]["n_total"], trace.rows[-1]["J_T"]


def run_sweep(cfg: dict, out_dir, jobs: Optional[int] = None) -> list:
    """Run every configuration of the sweep, one process per run."""
    runs = expand_sweep(cfg)
    for _, run_cfg in runs:
        resolve_config(run_cfg)
    jobs = jobs or os.cpu_count() or 1
    tasks = [(label, run_cfg, str(out_dir)) for label, run_cfg in runs]
    if jobs == 1:
        results = [_sweep_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_worker, tasks))
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    _write_csv(Path(out_dir) / "sweep.csv", ["run", "status", "n_total", "J_T"], results)
    return results
