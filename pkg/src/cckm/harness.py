"""Scenario definitions, train/test orchestration and artifact output.

Case A: rate-controlled injector, low constant rate for training, then a
shut-in followed by a 100x rate spike.  Case B: BHP-controlled producer,
one drawdown for training and a further 90 bar drop for testing.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .actuator import Kinematics
from .core import (BAR, CENTIPOISE, DAY, ControlSchedule, Mode, ReservoirModel,
                   TrajectoryDataset, Variable, WellSpec, build_model, snapshot_matrices)
from .ident import (ChannelScaling, FieldScaling, FitReport, Kind, SurrogateModel, fit_cckm_delta,
                    fit_cckm_level, fit_dmdc, fit_hybrid_b, fit_report, save_model)
from .metrics import EvalReport, build_report, write_series_csv
from .simulator import simulate
from .surrogate import GainDiagnostics, Rollout, rollout, same_step_gain, teacher_forced

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError", "FitError", "RunConfig", "ScenarioSpec", "ExperimentResult",
    "make_case_a", "make_case_b", "make_scenario", "fit_models", "evaluate_model",
    "run_experiment", "load_config",
]

KIND_ORDER = (Kind.DMDC, Kind.CCKM_LEVEL, Kind.CCKM_DELTA, Kind.HYBRID_B)


class ConfigError(ValueError):
    pass


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Experiment configuration in field units (days, m³/day, bar, cP).

    ``sw_init=None`` selects the case default (0 for A, 0.5 for B).
    ``models`` lists kinds to report; ``"all"`` means DMDc, the
    scenario's control-coherent form(s) and the hybrid.
    """

    case: str = "a"
    nx: int = 21
    dt_days: float = 1.0
    train_steps: int = 60
    shutin_steps: int = 30
    highrate_steps: int = 30
    test_steps: int = 60
    q_train: float = 50.0
    rate_factor: float = 100.0
    bhp_train_bar: float = 110.0
    bhp_test_bar: float = 20.0
    p_init_bar: float = 200.0
    sw_init: float | None = None
    mu_w_cp: float = 1.0
    mu_o_cp: float = 1.0
    lam: float = 1.0
    rel_tol: float = 1e-10
    models: tuple = ("all",)
    out_dir: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "case", str(self.case).lower())
        if isinstance(self.models, str):
            object.__setattr__(self, "models", tuple(m.strip() for m in self.models.split(",") if m.strip()))
        else:
            object.__setattr__(self, "models", tuple(self.models))
        if self.case not in ("a", "b"):
            raise ConfigError(f"case must be 'a' or 'b', got {self.case!r}")
        for name in ("nx", "train_steps", "highrate_steps", "test_steps"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        if int(self.shutin_steps) != self.shutin_steps or self.shutin_steps < 0:
            raise ConfigError(f"shutin_steps must be an integer >= 0, got {self.shutin_steps!r}")
        if self.nx < 3 or self.nx % 2 == 0:
            raise ConfigError(f"nx must be odd and >= 3, got {self.nx}")
        for name in ("dt_days", "q_train", "rate_factor", "bhp_train_bar", "bhp_test_bar",
                     "p_init_bar", "mu_w_cp", "mu_o_cp"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        if self.sw_init is not None and not 0 <= self.sw_init <= 1:
            raise ConfigError("sw_init must lie in [0, 1]")
        if not 0 < self.lam <= 1:
            raise ConfigError("lam must lie in (0, 1]")
        if not 0 < self.rel_tol < 1:
            raise ConfigError("rel_tol must lie in (0, 1)")
        valid = {"all"} | {k.value for k in Kind}
        bad = [m for m in self.models if m not in valid]
        if bad or not self.models:
            raise ConfigError(f"unknown model kinds {bad}; choose from {sorted(valid)}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["models"] = list(self.models)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **changes})

    def experiment_dict(self) -> dict:
        """Everything that determines the results (the output location does not)."""
        d = self.to_dict()
        d.pop("out_dir")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.experiment_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config(path) -> dict:
    """Read a JSON config file mirroring :class:`RunConfig` fields."""
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("config file must hold a JSON object")
    return d


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    model: ReservoirModel
    well: WellSpec
    train_schedule: ControlSchedule
    test_schedule: ControlSchedule
    formulations: dict = field(default_factory=dict)

    def __post_init__(self):
        tr, te = self.train_schedule, self.test_schedule
        if tr.mode is not te.mode or tr.dt != te.dt:
            raise ConfigError("train and test schedules must share mode and dt")
        if tr.mode is not self.well.mode:
            raise ConfigError("schedule mode differs from the well mode")

    @property
    def schedule(self) -> ControlSchedule:
        return self.train_schedule.concat(self.test_schedule)

    @property
    def kinematics(self) -> Kinematics:
        lam = self.well.lam if self.well.mode is Mode.BHP else 1.0
        return Kinematics(self.well.mode, self.train_schedule.dt, lam)


def _model(cfg: RunConfig, sw_default: float) -> ReservoirModel:
    sw = sw_default if cfg.sw_init is None else cfg.sw_init
    return build_model(cfg.nx, {"p_init": cfg.p_init_bar * BAR, "sw_init": sw,
                                "mu_w": cfg.mu_w_cp * CENTIPOISE, "mu_o": cfg.mu_o_cp * CENTIPOISE})


def make_case_a(cfg: RunConfig) -> ScenarioSpec:
    """Rate-mode shut-in and restart: train at ``q_train``, test 0 then ``rate_factor * q_train``."""
    model = _model(cfg, 0.0)
    well = WellSpec.centered(model, Mode.RATE)
    dt = cfg.dt_days * DAY
    q = cfg.q_train / DAY
    train = ControlSchedule(Mode.RATE, dt, np.full(cfg.train_steps, q))
    test = ControlSchedule(Mode.RATE, dt, np.concatenate(
        [np.zeros(cfg.shutin_steps), np.full(cfg.highrate_steps, cfg.rate_factor * q)]))
    return ScenarioSpec("case-a", model, well, train, test,
                        {Variable.PRESSURE: Kind.CCKM_DELTA, Variable.SATURATION: Kind.CCKM_DELTA})


def make_case_b(cfg: RunConfig) -> ScenarioSpec:
    """BHP drawdown: train at ``bhp_train_bar``, test at ``bhp_test_bar``."""
    model = _model(cfg, 0.5)
    well = WellSpec.centered(model, Mode.BHP, lam=cfg.lam)
    dt = cfg.dt_days * DAY
    train = ControlSchedule(Mode.BHP, dt, np.full(cfg.train_steps, cfg.bhp_train_bar * BAR))
    test = ControlSchedule(Mode.BHP, dt, np.full(cfg.test_steps, cfg.bhp_test_bar * BAR))
    return ScenarioSpec("case-b", model, well, train, test,
                        {Variable.PRESSURE: Kind.CCKM_LEVEL, Variable.SATURATION: Kind.CCKM_DELTA})


def make_scenario(cfg: RunConfig) -> ScenarioSpec:
    return make_case_a(cfg) if cfg.case == "a" else make_case_b(cfg)


def requested_kinds(cfg: RunConfig, spec: ScenarioSpec, variable: Variable) -> list:
    if "all" in cfg.models:
        kinds = {Kind.DMDC, spec.formulations[variable], Kind.HYBRID_B}
    else:
        kinds = {Kind(m) for m in cfg.models}
    return [k for k in KIND_ORDER if k in kinds]


def provenance_tag(train: TrajectoryDataset) -> str:
    """Digest of the training data, shared by every model fitted on it."""
    h = hashlib.sha256()
    for arr in (train.p, train.x, train.u):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    h.update(f"{train.variable.value}|{train.mode.value}|{train.dt!r}".encode())
    return h.hexdigest()[:16]


def shared_channel(kin: Kinematics, pressure_train: TrajectoryDataset) -> ChannelScaling:
    """Actuator-channel coordinates common to the pressure and saturation surrogates."""
    Z, Zp, _ = snapshot_matrices(pressure_train)
    m = kin.m
    field_sc = FieldScaling.from_snapshots(np.hstack([Z[m:], Zp[m:, -1:]]))
    return ChannelScaling.default(kin, field_sc)


def fit_models(train: TrajectoryDataset, kin: Kinematics, kinds, base: Kind,
               channel: ChannelScaling, rel_tol: float) -> dict:
    """Fit the requested kinds (plus whatever a hybrid needs) on one training slice."""
    Z, Zp, U = snapshot_matrices(train)
    kw = dict(variable=train.variable, rel_tol=rel_tol, channel=channel,
              provenance=provenance_tag(train))
    need = set(kinds)
    if Kind.HYBRID_B in need:
        need |= {Kind.DMDC, base}
    models = {}
    try:
        if Kind.DMDC in need:
            models[Kind.DMDC] = fit_dmdc(Z, Zp, U, kin=kin, **kw)
        if Kind.CCKM_LEVEL in need:
            models[Kind.CCKM_LEVEL] = fit_cckm_level(Z, Zp, U, kin, **kw)
        if Kind.CCKM_DELTA in need:
            models[Kind.CCKM_DELTA] = fit_cckm_delta(Z, Zp, U, kin, **kw)
        if Kind.HYBRID_B in need:
            models[Kind.HYBRID_B] = fit_hybrid_b(models[Kind.DMDC], models[base])
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise FitError(f"fitting {train.variable.value} surrogates failed: {exc}") from exc
    return models


def teacher_forced_rollout(model: SurrogateModel, train: TrajectoryDataset) -> Rollout:
    """One-step predictions on the training pairs, packaged like a rollout."""
    Z, _, U = snapshot_matrices(train)
    m = model.m
    p_next, x_next = teacher_forced(model, Z[:m], Z[m:], U)
    return Rollout(np.vstack([train.p[:1], p_next.T]), np.vstack([train.x[:1], x_next.T]),
                   model.kind, model.variable)


def evaluate_model(model: SurrogateModel, train: TrajectoryDataset, test: TrajectoryDataset,
                   gain: GainDiagnostics | None = None):
    """Train (teacher-forced) and test (free-run) reports for one model."""
    tr = build_report(teacher_forced_rollout(model, train), train, "train")
    ro = rollout(model, test.p[0], test.x[0], test.u, allow_divergence=True)
    if ro.diverged_at is not None:
        logger.warning("%s %s rollout diverged at test step %d (%s)", model.variable.value,
                       model.kind.value, ro.diverged_at, ro.diverged_block)
    te = build_report(ro, test, "test", gain, t0=train.steps * train.dt)
    return tr, te


@dataclass
class ExperimentResult:
    spec: ScenarioSpec
    config: RunConfig
    truth: dict
    models: dict
    fits: list
    reports: list
    gains: dict
    files: list = field(default_factory=list)

    def report(self, variable, kind, window: str = "test") -> EvalReport:
        variable, kind = Variable(variable).value, Kind(kind).value
        for r in self.reports:
            if (r.variable, r.kind, r.window) == (variable, kind, window):
                return r
        raise KeyError(f"no {window} report for {variable}/{kind}")

    def fit(self, variable, kind) -> FitReport:
        for f in self.fits:
            if f.variable is Variable(variable) and f.kind is Kind(kind):
                return f
        raise KeyError(f"no fit report for {variable}/{kind}")

    def summary(self) -> dict:
        return {
            "case": self.spec.name,
            "version": __version__,
            "config": self.config.experiment_dict(),
            "config_hash": self.config.config_hash(),
            "gains": {v.value: g.to_dict() for v, g in self.gains.items()},
            "fits": [f.to_dict() for f in self.fits],
            "reports": [r.to_dict() for r in self.reports],
        }


def run_experiment(spec: ScenarioSpec, cfg: RunConfig, out_dir=None, write: bool = True) -> ExperimentResult:
    """Simulate, split, fit on the training slice, evaluate both windows and emit artifacts."""
    P, S = simulate(spec.model, spec.well, spec.schedule)
    n = len(spec.train_schedule)
    kin = spec.kinematics
    channel = shared_channel(kin, P.window(0, n))
    models, fits, reports, gains = {}, [], [], {}
    for traj in (P, S):
        var = traj.variable
        train, test = traj.window(0, n), traj.window(n, traj.steps)
        kinds = requested_kinds(cfg, spec, var)
        base = spec.formulations[var]
        fitted = fit_models(train, kin, kinds, base, channel, cfg.rel_tol)
        gain = None
        if Kind.DMDC in fitted and base in fitted:
            gain = same_step_gain(fitted[Kind.DMDC], fitted[base])
            gains[var] = gain
        Z, Zp, U = snapshot_matrices(train)
        for kind in kinds:
            model = fitted[kind]
            models[(var, kind)] = model
            fits.append(fit_report(model, Z, Zp, U, cfg.rel_tol))
            tr, te = evaluate_model(model, train, test,
                                    gain if kind in (Kind.DMDC, Kind.HYBRID_B) else None)
            reports += [tr, te]
    result = ExperimentResult(spec, cfg, {Variable.PRESSURE: P, Variable.SATURATION: S},
                              models, fits, reports, gains)
    if write:
        result.files = write_outputs(result, Path(out_dir if out_dir is not None else cfg.out_dir))
    return result


# -- output ----------------------------------------------------------------

def _cell(report: EvalReport | None, metric: str) -> str:
    if report is None:
        return ""
    if report.diverged:
        return f"diverged@{report.diverged_at}"
    v = getattr(report, metric)
    return "" if v is None else repr(float(v))


def _table_rows(result: ExperimentResult):
    header = ["model", "pressure_mae_bar", "pressure_fpce_pct", "saturation_mae",
              "saturation_fpce_pct", "pressure_control_fpce_pct", "saturation_control_fpce_pct"]
    rows = [header]
    for kind in KIND_ORDER:
        got = {v: _find(result, v, kind) for v in (Variable.PRESSURE, Variable.SATURATION)}
        if not any(got.values()):
            continue
        p, s = got[Variable.PRESSURE], got[Variable.SATURATION]
        rows.append([kind.value, _cell(p, "mae"), _cell(p, "fpce_pct"), _cell(s, "mae"),
                     _cell(s, "fpce_pct"), _cell(p, "control_fpce_pct"), _cell(s, "control_fpce_pct")])
    return rows


def _find(result, variable, kind):
    try:
        return result.report(variable, kind, "test")
    except KeyError:
        return None


def _full_series(result: ExperimentResult, var: Variable, kind: Kind, attr: str):
    tr = result.report(var, kind, "train")
    te = result.report(var, kind, "test")
    values = list(getattr(tr, attr)) + list(getattr(te, attr))[1:]
    total = result.truth[var].steps + 1
    values += [None] * (total - len(values))
    return [math.nan if v is None else v for v in values]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_outputs(result: ExperimentResult, out: Path) -> list:
    """Write summary, table, series, models and manifest; return the artifact paths."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "models").mkdir(exist_ok=True)
    files = []

    def dump_json(name, obj):
        path = out / name
        path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
        files.append(path)

    dump_json("summary.json", result.summary())
    with (out / "table1.csv").open("w", newline="") as fh:
        csv.writer(fh).writerows(_table_rows(result))
    files.append(out / "table1.csv")

    P = result.truth[Variable.PRESSURE]
    times = (P.times / DAY).tolist()
    for var, traj in result.truth.items():
        scale = BAR if var is Variable.PRESSURE else 1.0
        files.append(write_series_csv(out / f"mean_{var.value}_truth.csv", times,
                                      (traj.x.mean(axis=1) / scale).tolist()))
    act_scale = BAR if P.mode is Mode.BHP else 1.0
    files.append(write_series_csv(out / "actuator_truth.csv", times, (P.p[:, 0] / act_scale).tolist()))
    written_actuator = set()
    for (var, kind), model in result.models.items():
        files.append(write_series_csv(out / f"mean_{var.value}_{kind.value}.csv", times,
                                      _full_series(result, var, kind, "mean_series")))
        if kind not in written_actuator:
            written_actuator.add(kind)
            files.append(write_series_csv(out / f"actuator_{kind.value}.csv", times,
                                          _full_series(result, var, kind, "actuator_series")))
        mpath = save_model(model, out / "models" / f"{var.value}_{kind.value}.cckm")
        files += [mpath, Path(str(mpath) + ".json")]

    manifest = {
        "config_hash": result.config.config_hash(),
        "version": __version__,
        "artifacts": [{"path": str(f.relative_to(out)), "sha256": _sha256(f),
                       "bytes": f.stat().st_size} for f in files],
    }
    dump_json("manifest.json", manifest)
    return files
