"""End-to-end acceptance checks on the built-in presets.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion with the measured numbers. The long
optimization runs are shared between checks through module fixtures.
"""

import json
import time

import numpy as np
import pytest

from gpe_optctl import (
    ControlField,
    GrapeConfig,
    KrotovConfig,
    PhysicalParams,
    PotentialFamily,
    SpatialGrid,
    excited_state,
    fidelity_overlap,
    ground_state,
    optimize_grape,
    optimize_krotov,
    power_spectrum,
    propagate_backward,
    spectral_bandwidth,
)
from gpe_optctl.cli import main as cli_main
from gpe_optctl.dynamics import energy
from gpe_optctl.functionals import grape_penalty
from gpe_optctl.grape import gradient_L2
from gpe_optctl.harness import (
    apply_overrides,
    build_problem,
    convergence_self_test,
    preset,
    problem_spec_from_config,
)

pytestmark = pytest.mark.slow

HALF_PI, TWO_PI = np.pi / 2, 2 * np.pi


def report(record_property, text):
    record_property("detail", text)
    print(text)


def preset_problem(name, kappa=None):
    cfg = preset(name)
    if kappa is not None:
        cfg = apply_overrides(cfg, [f"problem.phys.kappa={kappa!r}"])
    spec = problem_spec_from_config(cfg)
    return build_problem(spec), spec.guess.control(spec.time)


class Timed:
    def __init__(self, fn):
        t0 = time.perf_counter()
        self.value = fn()
        self.seconds = time.perf_counter() - t0


# -- shared runs -------------------------------------------------------------

@pytest.fixture(scope="module")
def splitting_runs():
    runs = {}
    for kappa in (HALF_PI, TWO_PI):
        problem, guess = preset_problem("splitting", kappa)
        g = Timed(lambda: optimize_grape(problem.fresh_counter(), guess, GrapeConfig(
            search="bfgs", norm="H1", gamma=1e-6, max_equations=1500, stop_JT=1e-3)))
        k = Timed(lambda: optimize_krotov(problem.fresh_counter(), guess, KrotovConfig(
            k=1e-3, update_mode="newton", max_equations=1500, max_iterations=100, stop_JT=0.0)))
        runs[kappa] = {"problem": problem, "grape": g, "krotov": k}
    return runs


@pytest.fixture(scope="module")
def shaking_matched():
    problem, guess = preset_problem("shaking")
    out = {}
    for name, fn in (
        ("bfgs_H1", lambda p: optimize_grape(p, guess, GrapeConfig("bfgs", "H1", stop_JT=1e-2))),
        ("bfgs_L2", lambda p: optimize_grape(p, guess, GrapeConfig("bfgs", "L2", stop_JT=1e-2))),
        ("krotov", lambda p: optimize_krotov(p, guess, KrotovConfig(k=5e-3, stop_JT=1e-2))),
    ):
        out[name] = fn(problem.fresh_counter())
    return out


@pytest.fixture(scope="module")
def shaking_budget():
    problem, guess = preset_problem("shaking")
    out = {}
    for search, norm in (("conjugate_gradient", "H1"), ("conjugate_gradient", "L2"), ("bfgs", "H1")):
        cfg = GrapeConfig(search, norm, gamma=1e-6, max_equations=1500, stop_JT=0.0)
        out[(search, norm)] = optimize_grape(problem.fresh_counter(), guess, cfg)
    return out


# -- criteria ----------------------------------------------------------------

@pytest.mark.criterion(1, "harmonic oracle energies")
def test_harmonic_oracle(record_property):
    t0 = time.perf_counter()
    pot = PotentialFamily("shaking_shifted", {"mass": 1.0, "omega": 1.0, "c4": 0.0, "c6": 0.0})
    phys = PhysicalParams(mass=1.0, kappa=0.0)
    grid = SpatialGrid(-10.0, 10.0, 128)
    v = pot.value(grid.x, 0.0)
    e0 = energy(ground_state(pot, 0.0, phys, grid), v, phys)
    e1 = energy(excited_state(pot, 0.0, phys, grid), v, phys)
    seconds = time.perf_counter() - t0
    report(record_property, f"E0-0.5={e0 - 0.5:.1e}, E1-1.5={e1 - 1.5:.1e}, {seconds:.2f} s")
    assert abs(e0 - 0.5) < 1e-6 and abs(e1 - 1.5) < 1e-6
    assert seconds < 5


@pytest.mark.criterion(2, "adjoint gradient vs finite differences")
def test_gradient_finite_differences(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240611)
    worst = {}
    for name in ("splitting", "shaking"):
        for kappa in (0.0, HALF_PI):
            problem, guess = preset_problem(name, kappa)
            gamma = 1e-6
            traj = problem.forward(guess)
            grad = gradient_L2(guess, traj, problem.adjoint(traj, guess), problem, gamma).values
            t, T, dt = problem.time_grid.t, problem.time_grid.t_final, problem.time_grid.dt

            def J(values):
                c = guess.with_values(values)
                return problem.terminal_cost(problem.forward(c, store_trajectory=False)) + grape_penalty(c, gamma)

            errs = []
            for _ in range(10):
                coeffs = rng.standard_normal(8) / np.arange(1, 9)
                delta = sum(c * np.sin((j + 1) * np.pi * t / T) for j, c in enumerate(coeffs))
                h = 1e-6
                fd = (J(guess.values + h * delta) - J(guess.values - h * delta)) / (2 * h)
                errs.append(abs(fd - np.sum(grad * delta) * dt) / abs(fd))
            worst[(name, kappa)] = max(errs)
    seconds = time.perf_counter() - t0
    text = ", ".join(f"{n}@{k:.2f}: {e:.1e}" for (n, k), e in worst.items())
    report(record_property, f"max relative error {text}; {seconds:.0f} s")
    assert max(worst.values()) < 1e-4
    assert seconds < 300


@pytest.mark.criterion(3, "splitting reaches J_T <= 1e-2 within 1500 equations")
def test_splitting_convergence(record_property, splitting_runs):
    run = splitting_runs[HALF_PI]
    problem = run["problem"]
    (g_ctrl, g_trace), (k_ctrl, k_trace) = run["grape"].value, run["krotov"].value
    n_g, n_k = g_trace.equations_to_reach(1e-2), k_trace.equations_to_reach(1e-2)
    rho_d = problem.psi_d.density
    dens_err = {}
    for name, ctrl in (("grape", g_ctrl), ("krotov", k_ctrl)):
        rho = problem.fresh_counter().forward(ctrl, store_trajectory=False).final_state.density
        dens_err[name] = np.sum(np.abs(rho - rho_d)) * problem.grid.dx
    seconds = run["grape"].seconds + run["krotov"].seconds
    report(record_property,
           f"GRAPE BFGS H1: {n_g} equations (final J_T {g_trace.J_T[-1]:.2e}); "
           f"Krotov: {n_k} equations (final J_T {k_trace.J_T[-1]:.2e}); "
           f"L1 density error grape {dens_err['grape']:.3f}, krotov {dens_err['krotov']:.3f}; {seconds:.0f} s")
    assert n_g is not None and n_g <= 1500
    assert n_k is not None and n_k <= 1500
    assert g_trace.J_T[-1] <= 1e-2 and k_trace.J_T[-1] <= 1e-2
    assert seconds < 1800


def plateaus(trace, min_length=5):
    """Runs of consecutive forward solves logged with an unchanged accepted J_T."""
    values = [jt for _, _, kind, jt in trace.equations if kind == "forward"]
    runs, count = [], 1
    for a, b in zip(values, values[1:]):
        if b == a:
            count += 1
        else:
            runs.append(count)
            count = 1
    runs.append(count)
    return [r for r in runs if r >= min_length]


@pytest.mark.criterion(4, "GRAPE staircase vs continuous Krotov descent")
def test_convergence_shape(record_property, splitting_runs):
    run = splitting_runs[HALF_PI]
    g_trace, k_trace = run["grape"].value[1], run["krotov"].value[1]
    steps = plateaus(g_trace)
    decreasing = np.all(np.diff(k_trace.J_T) < 0)
    report(record_property, f"GRAPE plateaus of >=5 solves: {len(steps)} {steps}; "
                            f"Krotov J_T strictly decreasing over {len(k_trace.rows) - 1} iterations: {decreasing}")
    assert len(steps) >= 3
    assert decreasing


@pytest.mark.criterion(5, "Krotov Newton monotonicity")
def test_krotov_monotone(record_property, splitting_runs):
    J = splitting_runs[HALF_PI]["krotov"].value[1].column("J")
    nonincreasing = np.diff(J) <= 0
    longest = run = 0
    for ok in nonincreasing:
        run = run + 1 if ok else 0
        longest = max(longest, run)
    strong = splitting_runs[TWO_PI]["krotov"].value[1]
    J2 = strong.column("J")
    monotone2 = bool(np.all(np.diff(J2) <= 0))
    fallback = any("halved" in e for e in strong.events) or strong.status == "diverged"
    report(record_property, f"kappa=pi/2: {longest} consecutive nonincreasing steps ({len(J)} values); "
                            f"kappa=2pi: monotone={monotone2}, fallback={fallback}, status={strong.status}")
    assert longest + 1 >= 100
    assert monotone2 or fallback


@pytest.mark.criterion(6, "Krotov slows with larger nonlinearity, GRAPE barely changes")
def test_nonlinearity_trend(record_property, splitting_runs):
    nk = {k: r["krotov"].value[1].equations_to_reach(3e-2) for k, r in splitting_runs.items()}
    ng = {k: r["grape"].value[1].equations_to_reach(3e-2) for k, r in splitting_runs.items()}
    j0 = {k: r["krotov"].value[1].J_T[0] for k, r in splitting_runs.items()}
    change = abs(ng[TWO_PI] - ng[HALF_PI]) / ng[HALF_PI]
    report(record_property,
           f"equations to J_T=3e-2: Krotov {nk[HALF_PI]} (pi/2) vs {nk[TWO_PI]} (2pi); "
           f"GRAPE {ng[HALF_PI]} vs {ng[TWO_PI]} (change {change:.0%}); "
           f"initial J_T {j0[HALF_PI]:.3f} vs {j0[TWO_PI]:.3f}")
    assert nk[TWO_PI] > nk[HALF_PI]
    assert change < 0.5


@pytest.mark.criterion(7, "H1 controls are spectrally narrower")
def test_smoothness_ordering(record_property, shaking_matched):
    width, final = {}, {}
    for name, (ctrl, trace) in shaking_matched.items():
        width[name] = spectral_bandwidth(*power_spectrum(ctrl))
        final[name] = trace.J_T[-1]
    report(record_property, "bandwidth (1/ms) " + ", ".join(
        f"{n} {width[n]:.3f} at J_T {final[n]:.2e}" for n in width))
    assert all(j <= 1e-2 for j in final.values())
    assert width["bfgs_H1"] < width["bfgs_L2"]
    assert width["bfgs_H1"] < width["krotov"]


def improvement_over_tail(trace, budget, fraction=0.3):
    n, jt = trace.equation_curve()
    start = np.searchsorted(n, (1 - fraction) * budget, side="right") - 1
    return (jt[start] - jt[-1]) / jt[start], jt[-1]


@pytest.mark.criterion(8, "conjugate-gradient plateau vs continuing BFGS")
def test_plateau(record_property, shaking_budget):
    stats = {key: improvement_over_tail(trace, 1500) for key, (_, trace) in shaking_budget.items()}
    report(record_property, "relative J_T gain over last 30% of 1500 solves: " + ", ".join(
        f"{s}-{n} {gain:.1%} (final {jt:.2e})" for (s, n), (gain, jt) in stats.items()))
    cg = [stats[("conjugate_gradient", "H1")], stats[("conjugate_gradient", "L2")]]
    bfgs_gain, bfgs_final = stats[("bfgs", "H1")]
    assert all(gain < 0.01 for gain, _ in cg)
    assert bfgs_gain >= 0.01
    assert bfgs_final < min(jt for _, jt in cg)


@pytest.mark.criterion(9, "norm, time reversal and second-order time stepping")
def test_numerical_hygiene(record_property, splitting_runs, shaking_matched):
    drifts, fids = [], []
    cases = [(splitting_runs[HALF_PI]["problem"], splitting_runs[HALF_PI]["grape"].value[0]),
             (splitting_runs[TWO_PI]["problem"], splitting_runs[TWO_PI]["krotov"].value[0])]
    shaking_problem, _ = preset_problem("shaking")
    cases += [(shaking_problem, ctrl) for ctrl, _ in shaking_matched.values()]
    for problem, ctrl in cases:
        traj = problem.fresh_counter().forward(ctrl)
        norms = np.sqrt(np.sum(np.abs(traj.states) ** 2, axis=1) * problem.grid.dx)
        drifts.append(np.max(np.abs(norms - 1)))
        back = propagate_backward(traj.final_state, ctrl, problem.potential, problem.phys,
                                  store_trajectory=False)
        fids.append(fidelity_overlap(back.final_state, problem.psi0))
    order = convergence_self_test(problem_spec_from_config(preset("splitting")))
    report(record_property, f"max norm drift {max(drifts):.1e}, min reversal fidelity {min(fids):.15f}, "
                            f"dt-halving ratio {order['dt_ratio']:.3f}")
    assert max(drifts) < 1e-9
    assert min(fids) >= 1 - 1e-8
    assert 3.5 <= order["dt_ratio"] <= 4.5


@pytest.mark.criterion(10, "bit-identical trace from identical run.json")
def test_determinism(record_property, tmp_path):
    cfg = apply_overrides(preset("shaking"), ["optimizer.kind=hybrid", "optimizer.switch_after=3",
                                              "optimizer.max_equations=40",
                                              "problem.guess.noise=0.02", "seed=99"])
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    codes = [cli_main(["optimize", "--config", str(path), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    a = (tmp_path / "a" / "trace.csv").read_bytes()
    b = (tmp_path / "b" / "trace.csv").read_bytes()
    same_config = (tmp_path / "a" / "run.json").read_bytes() == (tmp_path / "b" / "run.json").read_bytes()
    rows = a.count(b"\n") - 1
    report(record_property, f"exit codes {codes}, run.json identical {same_config}, "
                            f"trace.csv identical {a == b} ({rows} rows)")
    assert codes == [0, 0] and same_config and a == b
