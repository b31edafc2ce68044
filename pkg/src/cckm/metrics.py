"""Error metrics and evaluation reports for surrogate trajectories.

Errors are reported in output units: bar for pressure, dimensionless for
saturation.  FPCE is taken on the stacked window snapshot matrix,
``100 ||pred - ref||_F / ||ref||_F``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import BAR, Mode, TrajectoryDataset, Variable, s_to_days
from .surrogate import GainDiagnostics, Rollout

__all__ = [
    "UndefinedDenominator", "mae", "fpce", "control_channel_error",
    "EvalReport", "build_report", "write_series_csv", "to_output_units",
]


class UndefinedDenominator(ArithmeticError):
    """The reference has zero Frobenius norm, so a relative error is undefined."""


def _pair(pred, ref):
    pred = np.asarray(pred, float)
    ref = np.asarray(ref, float)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs ref {ref.shape}")
    if pred.size == 0:
        raise ValueError("empty window")
    return pred, ref


def mae(pred, ref) -> float:
    """Mean absolute error over every entry of the window."""
    pred, ref = _pair(pred, ref)
    return float(np.mean(np.abs(pred - ref)))


def fpce(pred, ref) -> float:
    """Frobenius-norm percent change error; raises :class:`UndefinedDenominator` for a zero reference."""
    pred, ref = _pair(pred, ref)
    denom = np.linalg.norm(ref)
    if denom == 0:
        raise UndefinedDenominator("reference window has zero Frobenius norm")
    return float(100.0 * np.linalg.norm(pred - ref) / denom)


def control_channel_error(p_pred, p_sched) -> float:
    """FPCE of a predicted actuator series against the scheduled one."""
    return fpce(p_pred, p_sched)


def to_output_units(x, variable: Variable):
    x = np.asarray(x, float)
    return x / BAR if Variable(variable) is Variable.PRESSURE else x


def _actuator_units(p, mode: Mode):
    p = np.asarray(p, float)
    return p / BAR if Mode(mode) is Mode.BHP else p


def _finite_or_none(v):
    return None if v is None or not math.isfinite(v) else float(v)


def _row_means(x):
    with np.errstate(over="ignore", invalid="ignore"):
        return np.mean(x, axis=1)


@dataclass(frozen=True)
class EvalReport:
    """Metrics of one model on one window plus plot-ready series.

    ``mae`` and ``fpce_pct`` cover the steps actually predicted; when
    ``diverged_at`` is set the rollout stopped there and those steps are
    only the finite prefix.  ``fpce_pct`` is ``None`` when the reference
    window is identically zero.  Series include the window's initial
    snapshot; units are bar (pressure, BHP), m³ (cumulative volume) or
    dimensionless (saturation).
    """

    variable: str
    kind: str
    window: str
    mae: float | None
    fpce_pct: float | None
    control_fpce_pct: float | None
    steps: int
    diverged_at: int | None = None
    diverged_block: str | None = None
    field_min: float | None = None
    field_max: float | None = None
    gain: dict | None = None
    times_days: list = field(default_factory=list)
    mean_series: list = field(default_factory=list)
    actuator_series: list = field(default_factory=list)

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def score(self, metric: str) -> float:
        """Metric for ranking; a blow-up or undefined value ranks as ``inf``."""
        v = getattr(self, metric)
        return math.inf if self.diverged or v is None else float(v)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=False)


def build_report(rollout: Rollout, reference: TrajectoryDataset, window: str,
                 gain: GainDiagnostics | None = None, t0: float = 0.0) -> EvalReport:
    """Compare a prediction against the reference over the same window.

    ``rollout`` starts from the reference's first snapshot; the metrics
    exclude that shared initial condition.  ``t0`` (s) offsets the time
    axis of the emitted series.
    """
    K = reference.steps
    n_pred = len(rollout.x_pred)
    if n_pred > K + 1 or (rollout.diverged_at is None and n_pred != K + 1):
        raise ValueError(f"prediction covers {n_pred} snapshots, reference {K + 1}")
    if rollout.variable is not reference.variable:
        raise ValueError("prediction and reference describe different variables")
    var = reference.variable
    x_pred = to_output_units(rollout.x_pred, var)
    x_ref = to_output_units(reference.x[:n_pred], var)
    p_pred = _actuator_units(rollout.p_pred, reference.mode)
    p_ref = _actuator_units(reference.p[:n_pred], reference.mode)
    if n_pred > 1:
        err_mae = mae(x_pred[1:], x_ref[1:])
        try:
            err_fpce = fpce(x_pred[1:], x_ref[1:])
        except UndefinedDenominator:
            err_fpce = None
        try:
            ctl = control_channel_error(p_pred[1:], p_ref[1:])
        except UndefinedDenominator:
            ctl = None
        lo, hi = float(np.min(x_pred[1:])), float(np.max(x_pred[1:]))
    else:
        err_mae, err_fpce, ctl, lo, hi = math.nan, None, None, math.nan, math.nan
    times = s_to_days(reference.times[:n_pred] + t0)
    return EvalReport(
        variable=var.value, kind=rollout.kind.value, window=window,
        mae=_finite_or_none(err_mae),
        fpce_pct=_finite_or_none(err_fpce), control_fpce_pct=_finite_or_none(ctl),
        steps=n_pred - 1, diverged_at=rollout.diverged_at, diverged_block=rollout.diverged_block,
        field_min=_finite_or_none(lo), field_max=_finite_or_none(hi),
        gain=gain.to_dict() if gain is not None else None,
        times_days=[float(t) for t in times],
        mean_series=[_finite_or_none(v) for v in _row_means(x_pred)],
        actuator_series=[_finite_or_none(v) for v in p_pred[:, 0]],
    )


def write_series_csv(path, times_days, values) -> Path:
    """Write a ``t_days,value`` series with round-trip float formatting."""
    path = Path(path)
    if len(times_days) != len(values):
        raise ValueError("series and time axis differ in length")
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t_days", "value"])
        for t, v in zip(times_days, values):
            wr.writerow([repr(float(t)), repr(float(v))])
    return path
