"""Command-line entry point.

Subcommands: ``ground``, ``excited``, ``propagate``, ``optimize``,
``sweep`` and ``spectra``. Exit status is 0 on success, 2 for a bad
configuration and 3 for a numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .dynamics import (
    NormDriftError,
    StationaryStateError,
    chemical_potential,
    count_nodes,
    energy,
    save_trajectory,
)
from .grid import ControlField
from .harness import (
    ConfigError,
    _stationary,
    apply_overrides,
    build_problem,
    load_config,
    problem_spec_from_config,
    resolve_config,
    run_experiment,
    run_sweep,
    spectral_history,
)
from .trace import RunTrace

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

logger = logging.getLogger("gpe_optctl")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file (default: splitting preset)")
    common.add_argument("--preset", help="start from a built-in preset instead of a file")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--override", action="append", default=[], metavar="K=V",
                        help="dotted-key override, may be repeated")
    common.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")

    parser = argparse.ArgumentParser(prog="gpe-optctl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (("ground", "ground state at --lambda"),
                           ("excited", "first excited state at --lambda")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--lambda", dest="lam", type=float, help="control value (default: desired)")
        if name == "excited":
            p.add_argument("--order", type=int, default=1)

    p = sub.add_parser("propagate", parents=[common], help="propagate the initial state")
    p.add_argument("--control", help="control CSV (t, lambda); default: the configured guess")
    p.add_argument("--column", default=None, help="column of the control CSV to use")

    sub.add_parser("optimize", parents=[common], help="run one optimizer")

    p = sub.add_parser("sweep", parents=[common], help="run the cross product in sweep.axes")
    p.add_argument("--jobs", type=int, default=None, help="parallel runs (default: all cores)")

    p = sub.add_parser("spectra", parents=[common], help="power spectra of saved controls")
    p.add_argument("--run", required=True, help="run directory containing control.csv")
    return parser


def _config(args, keep_sweep=False) -> dict:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = {"preset": args.preset or "splitting"}
    if args.preset and args.config:
        cfg["preset"] = args.preset
    cfg = apply_overrides(cfg, args.override)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg["seed"] = args.seed
    if keep_sweep:
        return cfg
    return resolve_config(cfg)


def _stationary_cmd(args, excited: bool) -> int:
    cfg = _config(args)
    spec = problem_spec_from_config(cfg)
    lam = args.lam if args.lam is not None else spec.desired["lambda"]
    rule = {"rule": "excited" if excited else "ground", "lambda": lam}
    if excited:
        rule["order"] = args.order
    psi = _stationary(spec, rule)
    v = spec.potential.value(spec.grid.x, lam)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "state.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "density", "re_psi", "im_psi", "V"])
        for row in zip(spec.grid.x, psi.density, psi.amplitudes.real, psi.amplitudes.imag, v):
            w.writerow([repr(float(a)) for a in row])
    info = {
        "state": rule,
        "energy": energy(psi, v, spec.phys),
        "chemical_potential": chemical_potential(psi, v, spec.phys),
        "nodes": count_nodes(psi),
        "norm": psi.norm,
    }
    (out / "state.json").write_text(json.dumps(info, indent=2) + "\n")
    (out / "run.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    print(f"E = {info['energy']:.10g}  mu = {info['chemical_potential']:.10g}  nodes = {info['nodes']}")
    return EXIT_OK


def _read_control(path, column, time_grid) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"control file {path} is empty")
    names = [c for c in rows[0] if c != "t"]
    col = column or names[-1]
    if col not in rows[0]:
        raise ConfigError(f"control file {path} has no column {col!r}")
    values = np.array([float(r[col]) for r in rows])
    if values.size != time_grid.n_nodes:
        raise ConfigError(f"control has {values.size} nodes, time grid needs {time_grid.n_nodes}")
    return values


def _propagate(args) -> int:
    cfg = _config(args)
    spec = problem_spec_from_config(cfg)
    problem = build_problem(spec, cfg.get("propagator"))
    if args.control:
        values = _read_control(args.control, args.column, spec.time)
    else:
        values = spec.guess.values(spec.time, int(cfg.get("seed", 0)))
    control = ControlField(spec.time, values)
    traj = problem.forward(control)
    jt = problem.terminal_cost(traj)
    out = Path(args.out)
    stride = int(cfg.get("output", {}).get("density_stride", 10))
    save_trajectory(traj, out, stride=stride)
    (out / "run.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    (out / "result.json").write_text(json.dumps({"J_T": jt, "final_norm": traj.final_state.norm},
                                                indent=2) + "\n")
    print(f"J_T = {jt:.6e}")
    return EXIT_OK


def _optimize(args) -> int:
    cfg = _config(args)
    _, _, trace, _ = run_experiment(cfg, args.out)
    last = trace.rows[-1]
    print(f"{trace.status}: J_T = {last['J_T']:.6e} after {last['n_total']} solved equations")
    return EXIT_OK


def _sweep(args) -> int:
    cfg = _config(args, keep_sweep=True)
    results = run_sweep(cfg, args.out, args.jobs)
    for label, status, n_total, jt in results:
        print(f"{label}: {status}, J_T = {jt:.4e}, n = {n_total}")
    return EXIT_OK


def _spectra(args) -> int:
    run = Path(args.run)
    path = run / "control.csv"
    if not path.exists():
        raise ConfigError(f"{path} not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    t = data[:, 0]
    dt = t[1] - t[0]
    snaps = [(int(name.split("_", 1)[1]), data[:, j]) for j, name in enumerate(header) if j]
    trace = RunTrace(snapshots=snaps)
    iters, nu, power, width = spectral_history(trace.snapshots, dt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "spectra.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "bandwidth"] + [f"P_{i}" for i in range(nu.size)])
        w.writerow(["nu", ""] + [repr(float(v)) for v in nu])
        for it, bw, p in zip(iters, width, power):
            w.writerow([int(it), repr(float(bw))] + [repr(float(v)) for v in p])
    print(f"{len(iters)} spectra, final bandwidth {width[-1]:.4g}")
    return EXIT_OK


_COMMANDS = {
    "ground": lambda a: _stationary_cmd(a, False),
    "excited": lambda a: _stationary_cmd(a, True),
    "propagate": _propagate,
    "optimize": _optimize,
    "sweep": _sweep,
    "spectra": _spectra,
}


def main(argv=None) -> int:
    level = os.environ.get("GPE_OPTCTL_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NormDriftError, StationaryStateError, FloatingPointError,
            np.linalg.LinAlgError, ZeroDivisionError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
