"""Command-line entry point.

Subcommands: ``run-case`` runs a full experiment; ``simulate``, ``fit``
and ``evaluate`` expose the same pipeline as separate stages that
communicate through files.

Exit codes: 0 success, 2 configuration error, 3 simulation failure,
4 fit failure.  Surrogate blow-ups are reported, not treated as errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import BAR, DAY, ControlSchedule, Mode, Variable
from .harness import (ConfigError, FitError, RunConfig, evaluate_model, fit_models, load_config,
                      make_scenario, run_experiment, shared_channel)
from .ident import Kind, load_model, save_model
from .simulator import SimulationError, read_trajectory_csv, simulate, write_trajectory_csv

log = logging.getLogger("cckm")

EXIT_OK, EXIT_CONFIG, EXIT_SIM, EXIT_FIT = 0, 2, 3, 4


def _config_from_args(args) -> RunConfig:
    base = load_config(args.config) if getattr(args, "config", None) else {}
    overrides = {
        "case": getattr(args, "case", None),
        "nx": getattr(args, "nx", None),
        "dt_days": getattr(args, "dt_days", None),
        "models": getattr(args, "models", None),
        "out_dir": getattr(args, "out", None),
        "rel_tol": getattr(args, "rel_tol", None),
    }
    merged = {**base, **{k: v for k, v in overrides.items() if v is not None}}
    return RunConfig.from_dict(merged)


def _add_common(p, out_help):
    p.add_argument("--case", choices=["a", "b"], type=str.lower)
    p.add_argument("--nx", type=int, help="cells per side (odd)")
    p.add_argument("--dt-days", type=float, dest="dt_days", help="control step length in days")
    p.add_argument("--config", help="JSON file mirroring the run configuration")
    p.add_argument("--out", help=out_help)


def cmd_run_case(args) -> int:
    cfg = _config_from_args(args)
    spec = make_scenario(cfg)
    result = run_experiment(spec, cfg)
    for r in result.reports:
        if r.window != "test":
            continue
        status = f"diverged at step {r.diverged_at}" if r.diverged else \
            f"MAE {r.mae:.4g}  FPCE {r.fpce_pct if r.fpce_pct is not None else float('nan'):.4g} %"
        print(f"{r.variable:10s} {r.kind:11s} {status}")
    print(f"wrote {len(result.files)} files to {cfg.out_dir}")
    return EXIT_OK


def _controls_path(d: Path) -> Path:
    return d / "controls.csv"


def cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    spec = make_scenario(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sched = spec.schedule
    P, S = simulate(spec.model, spec.well, sched)
    write_trajectory_csv(P, out / "pressure.csv")
    write_trajectory_csv(S, out / "saturation.csv")
    factor = DAY if sched.mode is Mode.RATE else 1.0 / BAR
    with _controls_path(out).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t_days", "u_m3_per_day" if sched.mode is Mode.RATE else "u_bar"])
        for k, u in enumerate(sched.u):
            wr.writerow([repr(k * sched.dt / DAY), repr(float(u * factor))])
    meta = {"config": cfg.experiment_dict(), "mode": sched.mode.value, "dt_s": sched.dt,
            "train_steps": len(spec.train_schedule), "lam": spec.kinematics.lam,
            "formulations": {v.value: k.value for v, k in spec.formulations.items()}}
    (out / "scenario.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"simulated {len(sched)} steps into {out}")
    return EXIT_OK


def _load_stage(data_dir: Path):
    try:
        meta = json.loads((data_dir / "scenario.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{data_dir} does not hold simulate output: {exc}") from exc
    mode = Mode(meta["mode"])
    raw = np.loadtxt(_controls_path(data_dir), delimiter=",", skiprows=1, ndmin=2)[:, 1]
    u = raw / DAY if mode is Mode.RATE else raw * BAR
    ControlSchedule(mode, meta["dt_s"], u)
    trajs = {v: read_trajectory_csv(data_dir / f"{v.value}.csv", v, mode, u, meta["dt_s"])
             for v in (Variable.PRESSURE, Variable.SATURATION)}
    cfg = RunConfig.from_dict(meta["config"])
    return meta, cfg, trajs


def cmd_fit(args) -> int:
    data = Path(args.data)
    meta, cfg, trajs = _load_stage(data)
    n = args.train_steps or meta["train_steps"]
    spec = make_scenario(cfg)
    kin = spec.kinematics
    var = Variable(args.variable)
    channel = shared_channel(kin, trajs[Variable.PRESSURE].window(0, n))
    kind = Kind(args.kind)
    base = Kind(args.base) if args.base else spec.formulations[var]
    models = fit_models(trajs[var].window(0, n), kin, [kind], base, channel, args.rel_tol or cfg.rel_tol)
    path = save_model(models[kind], args.out)
    print(f"saved {kind.value} {var.value} model to {path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    data = Path(args.data)
    meta, _, trajs = _load_stage(data)
    n = args.train_steps or meta["train_steps"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for mpath in args.model:
        try:
            model = load_model(mpath)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load model {mpath}: {exc}") from exc
        traj = trajs[model.variable]
        tr, te = evaluate_model(model, traj.window(0, n), traj.window(n, traj.steps))
        name = f"report_{model.variable.value}_{model.kind.value}.json"
        (out / name).write_text(json.dumps({"train": tr.to_dict(), "test": te.to_dict()},
                                           indent=2, sort_keys=True) + "\n")
        print(f"{model.variable.value:10s} {model.kind.value:11s} test MAE {te.mae}  FPCE {te.fpce_pct}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cckm", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-case", help="simulate, fit, evaluate and write all artifacts")
    _add_common(p, "output directory")
    p.add_argument("--models", help="comma list of dmdc,cckm-level,cckm-delta,hybrid-b or all")
    p.add_argument("--rel-tol", type=float, dest="rel_tol")
    p.set_defaults(func=cmd_run_case)

    p = sub.add_parser("simulate", help="write ground-truth trajectories for a case")
    _add_common(p, "output directory for trajectories")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one surrogate from simulate output")
    p.add_argument("--data", required=True, help="directory written by 'simulate'")
    p.add_argument("--variable", required=True, choices=[v.value for v in Variable])
    p.add_argument("--kind", required=True, choices=[k.value for k in Kind])
    p.add_argument("--base", choices=[Kind.CCKM_LEVEL.value, Kind.CCKM_DELTA.value],
                   help="control-coherent base of a hybrid (default: the case formulation)")
    p.add_argument("--train-steps", type=int, dest="train_steps")
    p.add_argument("--rel-tol", type=float, dest="rel_tol")
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="score saved surrogates on the test window")
    p.add_argument("--data", required=True, help="directory written by 'simulate'")
    p.add_argument("--model", required=True, action="append", help="model file (repeatable)")
    p.add_argument("--train-steps", type=int, dest="train_steps")
    p.add_argument("--out", required=True, help="directory for report JSON files")
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIM
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
