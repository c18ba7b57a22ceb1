import json

import numpy as np
import pytest

from gpe_optctl import TimeGrid
from gpe_optctl.dynamics import count_nodes, load_trajectory
from gpe_optctl.harness import (
    ConfigError,
    GuessSpec,
    apply_overrides,
    build_problem,
    convergence_self_test,
    expand_sweep,
    preset,
    problem_spec_from_config,
    resolve_config,
    run_experiment,
    run_sweep,
    spectral_history,
)
from gpe_optctl.trace import TRACE_COLUMNS, RunTrace

SHORT = ["optimizer.grape.max_equations=12", "optimizer.grape.stop_JT=0",
         "problem.time.n_steps=400", "problem.time.t_final=0.5", "problem.grid.n_points=128"]


def short(name="splitting", extra=()):
    return apply_overrides({"preset": name}, SHORT + list(extra))


def test_presets_resolve():
    for name in ("splitting", "splitting-strong", "shaking"):
        cfg = preset(name)
        assert resolve_config(cfg) == cfg
    assert preset("splitting")["problem"]["phys"]["kappa"] == pytest.approx(np.pi / 2)
    assert preset("splitting-strong")["problem"]["phys"]["kappa"] == pytest.approx(2 * np.pi)
    assert preset("splitting")["optimizer"]["grape"]["gamma"] == 1e-6
    assert preset("splitting")["optimizer"]["krotov"]["k"] == 1e-3
    assert preset("shaking")["optimizer"]["krotov"]["k"] == 5e-3


def test_preset_states_sanity():
    split = build_problem(problem_spec_from_config(preset("splitting")))
    rho = split.psi_d.density
    peaks = np.flatnonzero((rho[1:-1] > rho[:-2]) & (rho[1:-1] > rho[2:]) & (rho[1:-1] > 0.1 * rho.max()))
    assert peaks.size == 2
    shake = build_problem(problem_spec_from_config(preset("shaking")))
    assert count_nodes(shake.psi_d) == 1
    assert count_nodes(shake.psi0) == 0


def test_overrides_parse_json_and_strings():
    cfg = apply_overrides({}, ["a.b=3", "a.c=1e-3", "d=krotov", "e=[1, 2]", "f=null"])
    assert cfg == {"a": {"b": 3, "c": 1e-3}, "d": "krotov", "e": [1, 2], "f": None}
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])
    with pytest.raises(ConfigError):
        apply_overrides({"a": 1}, ["a.b=2"])


def test_invalid_configs():
    with pytest.raises(ConfigError):
        resolve_config({"preset": "nope"})
    with pytest.raises(ConfigError):
        resolve_config(apply_overrides({}, ["optimizer.grape.search=newton"]))
    with pytest.raises(ConfigError):
        resolve_config(apply_overrides({}, ["problem.guess.lambda_end=2.0"]))
    with pytest.raises(ConfigError):
        resolve_config(apply_overrides({}, ["optimizer.kind=hybrid"]))
    with pytest.raises(ConfigError):
        resolve_config(apply_overrides({}, ["problem.grid.spacing=0.1"]))


def test_guess_kinds():
    tg = TimeGrid(2.0, 200)
    ramp = GuessSpec("linear_ramp", 0.0, 1.0).values(tg)
    assert ramp[0] == 0 and ramp[-1] == 1 and np.allclose(np.diff(ramp), 1 / 200)
    kick = GuessSpec("constant", 0.0, 0.0, kick=0.1).values(tg)
    assert np.max(kick) == pytest.approx(0.1, rel=1e-3)
    sine = GuessSpec("sine_ramp", 0.0, 1.0).values(tg)
    assert sine[0] == 0 and sine[-1] == pytest.approx(1)
    noisy1 = GuessSpec("linear_ramp", 0.0, 1.0, noise=0.05).values(tg, seed=7)
    noisy2 = GuessSpec("linear_ramp", 0.0, 1.0, noise=0.05).values(tg, seed=7)
    assert np.array_equal(noisy1, noisy2) and not np.array_equal(noisy1, ramp)
    assert noisy1[0] == 0 and noisy1[-1] == 1
    with pytest.raises(ConfigError):
        GuessSpec("constant", 0.0, 1.0)


def test_run_and_export(tmp_path):
    problem, control, trace, resolved = run_experiment(short(), tmp_path / "run")
    out = tmp_path / "run"
    rows = RunTrace.read_csv(out / "trace.csv")
    assert list(rows[0]) == TRACE_COLUMNS
    assert int(rows[-1]["n_total"]) == trace.rows[-1]["n_total"]
    # counter audit
    assert trace.rows[-1]["n_forward"] + trace.rows[-1]["n_backward"] == trace.rows[-1]["n_total"]
    assert problem.counter.n_total - trace.rows[-1]["n_total"] in (0, 1)
    assert json.loads((out / "run.json").read_text()) == resolved
    data, meta = load_trajectory(out / "meta.json")
    assert data.shape[1] == resolved["problem"]["grid"]["n_points"]
    header = (out / "control.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "t" and header[1] == "iter_0"
    spectra = (out / "spectra.csv").read_text().splitlines()
    assert spectra[0].startswith("iteration,bandwidth,P_0") and spectra[1].startswith("nu,")
    assert (out / "timing.csv").exists()


def test_rerun_is_bit_identical(tmp_path):
    _, _, _, resolved = run_experiment(short("shaking", ["optimizer.kind=krotov",
                                                         "optimizer.krotov.max_equations=7"]),
                                       tmp_path / "a")
    run_experiment(json.loads((tmp_path / "a" / "run.json").read_text()), tmp_path / "b")
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


def test_spectral_history_examples():
    iters, nu, power, width = spectral_history([(0, np.full(101, 0.4))], 0.01)
    assert power.shape == (1, nu.size)
    assert np.all(power[0, 1:] < 1e-25 * power[0, 0]) and width[0] == pytest.approx(0, abs=1e-10)
    with pytest.raises(ValueError):
        spectral_history([], 0.01)


def test_sweep_expansion_and_run(tmp_path):
    cfg = short(extra=["optimizer.grape.max_equations=4"])
    cfg["sweep"] = {"axes": {"problem.phys.kappa": [0.0, 1.0], "optimizer.kind": ["grape", "krotov"]}}
    runs = expand_sweep(cfg)
    assert len(runs) == 4 and all("sweep" not in c for _, c in runs)
    labels = [label for label, _ in runs]
    assert len(set(labels)) == 4
    cfg["sweep"]["axes"] = {"problem.phys.kappa": [0.0, 1.0]}
    results = run_sweep(cfg, tmp_path, jobs=2)
    assert len(results) == 2
    assert (tmp_path / "sweep.csv").exists()
    for label, *_ in results:
        assert (tmp_path / label / "trace.csv").exists()


def test_convergence_self_test_defaults():
    spec = problem_spec_from_config(preset("splitting"))
    report = convergence_self_test(spec)
    assert 3.5 <= report["dt_ratio"] <= 4.5
    assert report["dx_change"] < 1e-8


def test_dt_doubling_changes_terminal_cost_little():
    for name in ("splitting", "shaking"):
        spec = problem_spec_from_config(preset(name))
        costs = []
        for s in (spec, spec.refined(time=True)):
            p = build_problem(s)
            costs.append(p.terminal_cost(p.forward(s.guess.control(s.time), store_trajectory=False)))
        assert abs(costs[0] - costs[1]) < 1e-6
