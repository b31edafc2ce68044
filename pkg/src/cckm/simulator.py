"""Two-phase slightly compressible IMPES simulator with a Peaceman well.

Pressure is solved implicitly from the total (water + oil) volume balance

    phi c_t V (p' - p) / dt + sum_faces T lam_t (p'_i - p'_j) = q

on a TPFA stencil with no-flow outer boundaries; the face mobility is
upwinded with the old pressure.  Water saturation is then advanced
explicitly with upwind fractional flow on the frozen total fluxes,

    phi V (S' - S) = dt (q_w - sum_faces F_w) - phi V c_t S (p' - p),

where the last term is the share of fluid expansion carried by water.
Summing water and oil reproduces the pressure equation, so the implied
oil saturation ``1 - S`` stays consistent and ``S`` stays in [0, 1]
under the CFL restriction.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .actuator import Kinematics, propagate_actuator
from .core import (ControlSchedule, Mode, ReservoirModel, TrajectoryDataset, Variable,
                   WellSpec, pa_to_bar, s_to_days)

logger = logging.getLogger(__name__)

__all__ = [
    "SimulationError", "PressureSolveError", "SaturationBoundsError",
    "SimState", "StepRecord", "peaceman_well_index", "initial_state",
    "step_impes", "simulate", "write_trajectory_csv", "read_trajectory_csv",
]

SAT_EPS = 1e-9
CFL_TARGET = 0.9
SOLVE_RTOL = 1e-10


class SimulationError(RuntimeError):
    pass


class PressureSolveError(SimulationError):
    pass


class SaturationBoundsError(SimulationError):
    pass


@dataclass(frozen=True)
class SimState:
    p: np.ndarray
    sw: np.ndarray
    t: float = 0.0
    cum_injected: float = 0.0
    well_bhp: float = float("nan")

    def __post_init__(self):
        for name in ("p", "sw"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.all(np.isfinite(self.p)) or np.any(self.p <= 0):
            raise SimulationError("pressures must be finite and positive")
        if np.any(self.sw < 0) or np.any(self.sw > 1):
            raise SimulationError("saturations must lie in [0, 1]")


@dataclass(frozen=True)
class StepRecord:
    """Per-step bookkeeping for mass-balance checks (volumes in m³)."""

    injected: float
    produced: float
    accumulated: float
    water_in: float
    water_stored: float
    substeps: int
    cfl: float
    redistributed: float = 0.0

    @property
    def mass_balance_residual(self) -> float:
        """Net volume imbalance relative to the step's well flow.

        With the well shut the gross storage change ``sum |phi V c_t dp|``
        is the reference, so pure redistribution is judged against its own
        size rather than against zero flow.
        """
        scale = max(abs(self.injected), abs(self.produced), self.redistributed, 1e-300)
        return abs(self.injected - self.accumulated - self.produced) / scale


def peaceman_well_index(model: ReservoirModel, well: WellSpec) -> float:
    """Peaceman well index ``2 pi k h / ln(r_eq / r_w)`` with ``r_eq = 0.14 sqrt(dx² + dy²)``."""
    g = model.grid
    r_eq = 0.14 * math.sqrt(g.dx ** 2 + g.dy ** 2)
    if well.r_w >= r_eq:
        raise ValueError(f"wellbore radius {well.r_w} m must be below the equivalent radius {r_eq:.4g} m")
    return 2.0 * math.pi * model.props.permeability * g.h / math.log(r_eq / well.r_w)


def _faces(model: ReservoirModel):
    """Neighbour pairs ``(i, j)`` and their absolute transmissibilities (m³)."""
    g = model.grid
    nx = g.nx
    k = np.full(g.cell_count, model.props.permeability)
    idx = np.arange(g.cell_count).reshape(nx, nx)   # [row j, column i]
    left, right = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    down, up = idx[:-1, :].ravel(), idx[1:, :].ravel()
    # harmonic average of half-cell transmissibilities
    tx = 2.0 * g.h * g.dy / g.dx / (1.0 / k[left] + 1.0 / k[right])
    ty = 2.0 * g.h * g.dx / g.dy / (1.0 / k[down] + 1.0 / k[up])
    a = np.concatenate([left, down])
    b = np.concatenate([right, up])
    return a, b, np.concatenate([tx, ty])


def initial_state(model: ReservoirModel, well: WellSpec, bhp: float | None = None) -> SimState:
    """Initial reservoir state; a BHP well starts at ``bhp`` (default: well-cell pressure)."""
    if well.mode is Mode.BHP:
        bhp = float(model.p_init[well.cell]) if bhp is None else float(bhp)
        if not bhp > 0:
            raise ValueError("initial BHP must be positive")
    else:
        bhp = float("nan")
    return SimState(model.p_init, model.sw_init, 0.0, 0.0, bhp)


def _upwind(values, a, b, dp):
    """Pick the upstream cell value per face; ties take the mean."""
    return np.where(dp > 0, values[a], np.where(dp < 0, values[b], 0.5 * (values[a] + values[b])))


def step_impes(state: SimState, model: ReservoirModel, well: WellSpec, u_k: float, dt: float,
               mode: Mode | None = None, record: list | None = None) -> SimState:
    """Advance one control step of length ``dt`` seconds.

    ``u_k`` is a water injection rate (m³/s, negative produces) in rate
    mode and a BHP setpoint (Pa) in BHP mode.  If ``record`` is a list,
    a :class:`StepRecord` is appended to it.
    """
    if mode is not None and Mode(mode) is not well.mode:
        raise ValueError(f"control mode {mode} does not match well mode {well.mode}")
    props, n = model.props, model.grid.cell_count
    pv = model.pore_volume
    a, b, trans = _faces(model)
    w = well.cell
    p, sw = state.p, state.sw

    lw, lo = props.mobilities(sw)
    lt = lw + lo
    face_lt = trans * _upwind(lt, a, b, p[a] - p[b])

    # pressure increment system: (D + L) dp = q(p + dp) - L p
    storage = pv * props.c_t / dt
    lap = sparse.coo_matrix(
        (np.concatenate([face_lt, face_lt, -face_lt, -face_lt]),
         (np.concatenate([a, b, a, b]), np.concatenate([a, b, b, a]))), shape=(n, n)).tocsr()
    # residual as a face-flux divergence so a uniform field gives exactly zero
    flux0 = face_lt * (p[a] - p[b])
    rhs = np.zeros(n)
    np.add.at(rhs, a, -flux0)
    np.add.at(rhs, b, flux0)
    diag = storage.copy()
    wi = peaceman_well_index(model, well)
    if well.mode is Mode.RATE:
        rhs[w] += u_k
    else:
        # the sandface sits at the current actuator state for the whole step;
        # the command only sets the state for the next one
        bhp = state.well_bhp if np.isfinite(state.well_bhp) else float(p[w])
        kin = Kinematics(Mode.BHP, dt, well.lam)
        next_bhp = float(propagate_actuator(kin, np.array([bhp]), np.array([u_k]))[0])
        wi_t = wi * lt[w]
        diag[w] += wi_t
        rhs[w] += wi_t * (bhp - p[w])
    mat = (lap + sparse.diags(diag)).tocsc()
    dp = spsolve(mat, rhs)
    resid = np.linalg.norm(mat @ dp - rhs)
    rnorm = max(np.linalg.norm(rhs), np.finfo(float).tiny)
    if not np.all(np.isfinite(dp)) or resid > SOLVE_RTOL * rnorm and resid > 1e-300:
        cond = np.linalg.cond(mat.toarray()) if n <= 4000 else float("nan")
        raise PressureSolveError(
            f"pressure solve failed at t={state.t:.6g} s: relative residual "
            f"{resid / rnorm:.3e}, condition estimate {cond:.3e}")
    p_new = p + dp

    if well.mode is Mode.RATE:
        q = float(u_k)
        # sandface pressure implied by the imposed rate
        bhp = float(p_new[w] + q / (wi * lt[w]))
    else:
        q = float(wi_t * (bhp - p_new[w]))

    # saturation transport on frozen fluxes
    flux = face_lt * (p_new[a] - p_new[b])          # a -> b positive
    out_flow = np.zeros(n)
    in_flow = np.zeros(n)
    np.add.at(out_flow, a, np.clip(flux, 0, None))
    np.add.at(in_flow, b, np.clip(flux, 0, None))
    np.add.at(out_flow, b, np.clip(-flux, 0, None))
    np.add.at(in_flow, a, np.clip(-flux, 0, None))
    in_flow[w] += max(q, 0.0)
    out_flow[w] += max(-q, 0.0)
    cfl = float(np.max(dt / pv * props.max_fractional_flow_slope * (in_flow + out_flow)))
    nsub = max(1, math.ceil(cfl / CFL_TARGET))
    h = dt / nsub
    dp_sub = dp / nsub
    rate_mode = well.mode is Mode.RATE
    s = sw.copy()
    water_in = 0.0
    for _ in range(nsub):
        f = props.fractional_flow(s)
        fw = flux * np.where(flux > 0, f[a], f[b])
        div = np.zeros(n)
        np.add.at(div, a, -fw)
        np.add.at(div, b, fw)
        if rate_mode and q >= 0:
            qw = q
        else:
            qw = q * f[w]
        div[w] += qw
        water_in += qw * h
        s = s + h / pv * div - props.c_t * dp_sub * s
        if s.min() < -SAT_EPS or s.max() > 1 + SAT_EPS:
            raise SaturationBoundsError(
                f"saturation left [0, 1] (min {s.min():.3e}, max {s.max():.3e}) at "
                f"t={state.t:.6g} s with {nsub} sub-steps, CFL {cfl:.3g}")
        s = np.clip(s, 0.0, 1.0)

    if record is not None:
        record.append(StepRecord(
            injected=max(q, 0.0) * dt, produced=max(-q, 0.0) * dt,
            accumulated=float(np.sum(pv * props.c_t * dp)),
            redistributed=float(np.sum(np.abs(pv * props.c_t * dp))),
            water_in=water_in, water_stored=float(np.sum(pv * (s - sw))),
            substeps=nsub, cfl=cfl))
    cum = state.cum_injected + dt * float(u_k) if rate_mode else state.cum_injected
    return SimState(p_new, s, state.t + dt, cum, bhp if rate_mode else next_bhp)


def simulate(model: ReservoirModel, well: WellSpec, schedule: ControlSchedule,
             records: list | None = None, initial_bhp: float | None = None):
    """Run ``schedule`` and return ``(pressure, saturation)`` trajectories.

    The actuator series is the cumulative injected volume (m³) in rate
    mode and the well BHP (Pa) in BHP mode; both datasets share it.  A
    BHP well opens at ``t = 0`` with ``initial_bhp``, defaulting to the
    first setpoint; each step applies the current BHP while the command
    sets the next one.
    """
    if schedule.mode is not well.mode:
        raise ValueError("schedule and well modes differ")
    well.validate(model)
    kin = Kinematics(schedule.mode, schedule.dt, well.lam if well.mode is Mode.BHP else 1.0)
    if well.mode is Mode.BHP and initial_bhp is None:
        initial_bhp = float(schedule.u[0])
    state = initial_state(model, well, initial_bhp)
    n_steps = len(schedule)
    ps = np.empty((n_steps + 1, model.grid.cell_count))
    ss = np.empty_like(ps)
    act = np.empty((n_steps + 1, 1))
    ps[0], ss[0] = state.p, state.sw
    act[0] = 0.0 if well.mode is Mode.RATE else state.well_bhp
    for k, u in enumerate(schedule.u):
        state = step_impes(state, model, well, float(u), schedule.dt, record=records)
        act[k + 1] = propagate_actuator(kin, act[k], np.array([u]))
        ps[k + 1], ss[k + 1] = state.p, state.sw
    u = schedule.u.reshape(-1, 1)
    return (TrajectoryDataset(act, ps, u, Variable.PRESSURE, schedule.dt, schedule.mode),
            TrajectoryDataset(act, ss, u, Variable.SATURATION, schedule.dt, schedule.mode))


def write_trajectory_csv(traj: TrajectoryDataset, path) -> Path:
    """CSV with header ``t_days,p_actuator,cell_0..`` in bar / - / days.

    Rate-mode actuator values are cumulative volumes in m³; BHP values in bar.
    """
    path = Path(path)
    x = pa_to_bar(traj.x) if traj.variable is Variable.PRESSURE else traj.x
    p = traj.p[:, 0] if traj.mode is Mode.RATE else pa_to_bar(traj.p[:, 0])
    t = s_to_days(traj.times)
    header = ["t_days", "p_actuator"] + [f"cell_{i}" for i in range(x.shape[1])]
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for k in range(len(t)):
            wr.writerow([repr(float(t[k])), repr(float(p[k]))] + [repr(float(v)) for v in x[k]])
    return path


def read_trajectory_csv(path, variable: Variable, mode: Mode, u, dt: float) -> TrajectoryDataset:
    """Inverse of :func:`write_trajectory_csv`; controls come from elsewhere (SI)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    p = data[:, 1:2]
    x = data[:, 2:]
    if Mode(mode) is Mode.BHP:
        p = p * 1e5
    if Variable(variable) is Variable.PRESSURE:
        x = x * 1e5
    return TrajectoryDataset(p, x, np.asarray(u, float).reshape(-1, 1), variable, dt, mode)
