"""Domain types, unit conversions and snapshot bookkeeping.

Everything is stored in SI units.  Field units (bar, day, mD, cP,
m³/day) only appear at I/O boundaries through the helpers below.

Cells are indexed row-major: cell ``(i, j)`` with ``i`` the column (x)
and ``j`` the row (y) lives at flat index ``j * nx + i``.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

__all__ = [
    "BAR", "MILLIDARCY", "DAY", "CENTIPOISE",
    "bar_to_pa", "pa_to_bar", "days_to_s", "s_to_days",
    "Mode", "Variable",
    "Grid", "FluidRock", "ReservoirModel", "WellSpec",
    "ControlSchedule", "TrajectoryDataset",
    "build_model", "snapshot_matrices",
]

BAR = 1e5                 # Pa
MILLIDARCY = 9.869233e-16  # m²
DAY = 86400.0             # s
CENTIPOISE = 1e-3         # Pa·s


def bar_to_pa(x):
    return np.asarray(x, dtype=float) * BAR


def pa_to_bar(x):
    return np.asarray(x, dtype=float) / BAR


def days_to_s(x):
    return np.asarray(x, dtype=float) * DAY


def s_to_days(x):
    return np.asarray(x, dtype=float) / DAY


class Mode(str, enum.Enum):
    RATE = "rate"
    BHP = "bhp"


class Variable(str, enum.Enum):
    PRESSURE = "pressure"
    SATURATION = "saturation"


def _frozen_array(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Grid:
    """Square 2D areal Cartesian grid with a single layer of thickness ``h``."""

    nx: int
    Lx: float = 2000.0
    Ly: float = 2000.0
    h: float = 20.0

    def __post_init__(self):
        if int(self.nx) != self.nx or self.nx < 1:
            raise ValueError(f"nx must be a positive integer, got {self.nx!r}")
        if self.nx % 2 == 0:
            raise ValueError(f"nx must be odd so the well sits on the center cell, got {self.nx}")
        if not (self.Lx > 0 and self.Ly > 0 and self.h > 0):
            raise ValueError("grid extents and thickness must be positive")

    @property
    def cell_count(self) -> int:
        return self.nx * self.nx

    @property
    def dx(self) -> float:
        return self.Lx / self.nx

    @property
    def dy(self) -> float:
        return self.Ly / self.nx

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy * self.h

    @property
    def center(self) -> int:
        return (self.cell_count - 1) // 2

    def index(self, i: int, j: int) -> int:
        return j * self.nx + i


@dataclass(frozen=True)
class FluidRock:
    """Uniform rock and fluid properties with linear relative permeabilities."""

    permeability: float = 100 * MILLIDARCY
    porosity: float = 0.25
    mu_w: float = 1.0 * CENTIPOISE
    mu_o: float = 5.0 * CENTIPOISE
    c_t: float = 1e-4 / BAR

    def __post_init__(self):
        if not 0 < self.porosity < 1:
            raise ValueError(f"porosity must lie in (0, 1), got {self.porosity}")
        for name in ("permeability", "mu_w", "mu_o", "c_t"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @staticmethod
    def krw(sw):
        return sw

    @staticmethod
    def kro(sw):
        return 1.0 - sw

    def mobilities(self, sw):
        """Water and oil mobilities ``k_r/mu`` (1/(Pa·s))."""
        return self.krw(sw) / self.mu_w, self.kro(sw) / self.mu_o

    def fractional_flow(self, sw):
        lw, lo = self.mobilities(sw)
        return lw / (lw + lo)

    @property
    def max_fractional_flow_slope(self) -> float:
        # f(S) = S / (S + r (1 - S)) with r = mu_w / mu_o; f' peaks at an endpoint
        r = self.mu_w / self.mu_o
        return max(1.0 / r, r)


@dataclass(frozen=True)
class ReservoirModel:
    grid: Grid
    props: FluidRock
    p_init: np.ndarray
    sw_init: np.ndarray

    def __post_init__(self):
        n = self.grid.cell_count
        p = np.broadcast_to(np.asarray(self.p_init, dtype=float), (n,))
        sw = np.broadcast_to(np.asarray(self.sw_init, dtype=float), (n,))
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise ValueError("initial pressures must be finite and positive")
        if not np.all(np.isfinite(sw)) or np.any(sw < 0) or np.any(sw > 1):
            raise ValueError("initial saturations must lie in [0, 1]")
        object.__setattr__(self, "p_init", _frozen_array(p))
        object.__setattr__(self, "sw_init", _frozen_array(sw))

    @property
    def pore_volume(self) -> np.ndarray:
        return np.full(self.grid.cell_count, self.props.porosity * self.grid.cell_volume)


@dataclass(frozen=True)
class WellSpec:
    cell: int
    mode: Mode
    r_w: float = 0.1
    lam: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.r_w <= 0:
            raise ValueError("wellbore radius must be positive")
        if not 0 <= self.lam <= 1:
            raise ValueError(f"BHP gain lambda must lie in [0, 1], got {self.lam}")

    @classmethod
    def centered(cls, model: ReservoirModel, mode: Mode, **kw) -> "WellSpec":
        well = cls(model.grid.center, mode, **kw)
        well.validate(model)
        return well

    def validate(self, model: ReservoirModel) -> None:
        g = model.grid
        if not 0 <= self.cell < g.cell_count:
            raise ValueError(f"well cell {self.cell} outside grid")
        if self.r_w >= min(g.dx, g.dy) / 2:
            raise ValueError("wellbore radius must be smaller than half a cell")


@dataclass(frozen=True)
class ControlSchedule:
    """Per-step controls: m³/s for rate mode, Pa for BHP mode."""

    mode: Mode
    dt: float
    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        u = np.asarray(self.u, dtype=float)
        if u.ndim != 1:
            raise ValueError("controls must be a 1-D sequence (single well)")
        if len(u) < 1:
            raise ValueError("schedule needs at least one control value")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(u)):
            raise ValueError("controls must be finite")
        if self.mode is Mode.BHP and np.any(u <= 0):
            raise ValueError("BHP setpoints must be positive")
        object.__setattr__(self, "u", _frozen_array(u))

    def __len__(self):
        return len(self.u)

    def concat(self, other: "ControlSchedule") -> "ControlSchedule":
        if other.mode is not self.mode or other.dt != self.dt:
            raise ValueError("schedules must share mode and dt")
        return ControlSchedule(self.mode, self.dt, np.concatenate([self.u, other.u]))


@dataclass(frozen=True)
class TrajectoryDataset:
    """Actuator states ``p`` (K+1, m), field snapshots ``x`` (K+1, N_c), controls ``u`` (K, m)."""

    p: np.ndarray
    x: np.ndarray
    u: np.ndarray
    variable: Variable
    dt: float
    mode: Mode = Mode.RATE

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        u = np.asarray(self.u, dtype=float)
        x = np.asarray(self.x, dtype=float)
        p = p.reshape(len(p), -1)
        u = u.reshape(len(u), -1)
        if x.ndim != 2:
            raise ValueError("field snapshots must be a (K+1, N_c) array")
        if not (len(p) == len(x) == len(u) + 1):
            raise ValueError(f"inconsistent lengths: |p|={len(p)}, |x|={len(x)}, |u|={len(u)}")
        if p.shape[1] != u.shape[1]:
            raise ValueError("actuator and control dimensions differ")
        for name, arr in (("p", p), ("x", x), ("u", u)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
        variable = Variable(self.variable)
        if variable is Variable.SATURATION and (x.min() < 0 or x.max() > 1):
            raise ValueError("saturation snapshots must lie in [0, 1]")
        object.__setattr__(self, "variable", variable)
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "p", _frozen_array(p))
        object.__setattr__(self, "u", _frozen_array(u))
        object.__setattr__(self, "x", _frozen_array(x))

    @property
    def steps(self) -> int:
        return len(self.u)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def window(self, start: int, stop: int) -> "TrajectoryDataset":
        """Transitions ``start .. stop-1`` (snapshots ``start .. stop``)."""
        if not 0 <= start < stop <= self.steps:
            raise ValueError(f"bad window [{start}, {stop}) for {self.steps} steps")
        return dataclasses.replace(
            self, p=self.p[start:stop + 1], x=self.x[start:stop + 1], u=self.u[start:stop])


_MODEL_KEYS = {"Lx", "Ly", "h", "permeability", "porosity", "mu_w", "mu_o", "c_t", "p_init", "sw_init"}


def build_model(nx: int = 21, overrides: Mapping[str, Any] | None = None) -> ReservoirModel:
    """Default 2000 x 2000 x 20 m reservoir, 100 mD, 25 % porosity, 200 bar.

    ``overrides`` may set any of the grid (``Lx``, ``Ly``, ``h``), rock/fluid
    (``permeability``, ``porosity``, ``mu_w``, ``mu_o``, ``c_t``) or initial
    state (``p_init``, ``sw_init``) fields, all in SI units.
    """
    if nx < 3:
        raise ValueError(f"nx must be at least 3, got {nx}")
    if nx % 2 == 0:
        raise ValueError(f"nx must be odd, got {nx}")
    overrides = dict(overrides or {})
    unknown = set(overrides) - _MODEL_KEYS
    if unknown:
        raise ValueError(f"unknown model overrides: {sorted(unknown)}")
    grid = Grid(nx, **{k: overrides[k] for k in ("Lx", "Ly", "h") if k in overrides})
    props = FluidRock(**{k: overrides[k] for k in
                         ("permeability", "porosity", "mu_w", "mu_o", "c_t") if k in overrides})
    n = grid.cell_count
    p_init = np.broadcast_to(np.asarray(overrides.get("p_init", 200 * BAR), float), (n,))
    sw_init = np.broadcast_to(np.asarray(overrides.get("sw_init", 0.0), float), (n,))
    return ReservoirModel(grid, props, p_init, sw_init)


def snapshot_matrices(traj: TrajectoryDataset):
    """Return ``(Z, Zp, U)`` with columns ``[p_k; x_k]``, ``[p_k+1; x_k+1]`` and ``u_k``."""
    if traj.steps < 1:
        raise ValueError("need at least one transition")
    states = np.hstack([traj.p, traj.x]).T
    return states[:, :-1].copy(), states[:, 1:].copy(), traj.u.T.copy()
