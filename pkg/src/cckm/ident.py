"""Identification of DMDc, control-coherent (level / increment) and hybrid surrogates.

All surrogates act on the augmented state ``z = [p; x]`` where ``p`` is
the actuator state and ``x`` a field snapshot.  Regressions run in fitting
coordinates: the field is standardized by a scalar :class:`FieldScaling`
and the actuator channel (``p`` and ``u``) by a :class:`ChannelScaling`
chosen so the known kinematics stay linear.  Every stored block is
expressed in these coordinates.
"""
from __future__ import annotations

import dataclasses
import enum
import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .actuator import Kinematics, actuator_increment, actuator_matrices
from .core import BAR, DAY, Mode, Variable

__all__ = [
    "Kind", "FieldScaling", "ChannelScaling", "SurrogateModel", "LstsqInfo", "FitReport",
    "DegenerateRegressorWarning", "solve_least_squares",
    "fit_dmdc", "fit_cckm_level", "fit_cckm_delta", "fit_hybrid_b",
    "fit_report", "save_model", "load_model", "DEFAULT_REL_TOL",
]

DEFAULT_REL_TOL = 1e-10
MAGIC = b"CCKMSUR\x00"
FORMAT_VERSION = 1
_BLOCKS = ("A_pp", "A_px", "A_xp", "A_xx", "B_p", "B_x", "b_x")


class Kind(str, enum.Enum):
    DMDC = "dmdc"
    CCKM_LEVEL = "cckm-level"
    CCKM_DELTA = "cckm-delta"
    HYBRID_B = "hybrid-b"


class DegenerateRegressorWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FieldScaling:
    """Scalar affine map between physical and fitting coordinates of a field."""

    mean: float = 0.0
    scale: float = 1.0

    def forward(self, x):
        return (np.asarray(x, float) - self.mean) / self.scale

    def inverse(self, xs):
        return np.asarray(xs, float) * self.scale + self.mean

    #: spreads below this fraction of the field magnitude are rounding noise
    CONSTANT_RTOL = 1e-12

    @classmethod
    def from_snapshots(cls, x) -> "FieldScaling":
        """Scalar mean and standard deviation; a numerically constant field keeps unit scale."""
        x = np.asarray(x, float)
        mean, std = float(np.mean(x)), float(np.std(x))
        if std <= cls.CONSTANT_RTOL * max(abs(mean), np.finfo(float).tiny):
            std = 1.0
        return cls(mean, std)


@dataclass(frozen=True)
class ChannelScaling:
    """Affine maps of the actuator state and the control into fitting coordinates.

    ``p~ = (p - offset) / scale`` and ``u~ = (u - u_offset) / u_scale``.
    Rate kinematics stay linear only without offsets; BHP kinematics only
    when ``p`` and ``u`` share one map.  :meth:`kinematics` gives the
    equivalent law in fitting coordinates.
    """

    offset: float = 0.0
    scale: float = 1.0
    u_offset: float = 0.0
    u_scale: float = 1.0

    def __post_init__(self):
        for name in ("offset", "scale", "u_offset", "u_scale"):
            object.__setattr__(self, name, float(getattr(self, name)))
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not (self.scale > 0 and self.u_scale > 0):
            raise ValueError("channel scales must be positive")

    def p_forward(self, p):
        return (np.asarray(p, float) - self.offset) / self.scale

    def p_inverse(self, ps):
        return np.asarray(ps, float) * self.scale + self.offset

    def u_forward(self, u):
        return (np.asarray(u, float) - self.u_offset) / self.u_scale

    def check(self, kin: Kinematics) -> None:
        if kin.mode is Mode.RATE and (self.offset != 0 or self.u_offset != 0):
            raise ValueError("rate-mode channel maps must not shift p or u")
        if kin.mode is Mode.BHP and (self.offset, self.scale) != (self.u_offset, self.u_scale):
            raise ValueError("BHP-mode channel maps must treat p and u identically")

    def kinematics(self, kin: Kinematics) -> Kinematics:
        """The actuator law written in fitting coordinates."""
        self.check(kin)
        if kin.mode is Mode.RATE:
            return Kinematics(kin.mode, kin.dt * self.u_scale / self.scale, kin.lam, kin.m)
        return kin

    @classmethod
    def default(cls, kin: Kinematics, field: FieldScaling | None = None) -> "ChannelScaling":
        """Field-unit rate channel (m³, m³/day); BHP shares ``field`` or falls back to bar."""
        if kin.mode is Mode.RATE:
            return cls(0.0, 1.0, 0.0, 1.0 / DAY)
        if field is not None:
            return cls(field.mean, field.scale, field.mean, field.scale)
        return cls(0.0, BAR, 0.0, BAR)


@dataclass(frozen=True)
class SurrogateModel:
    """Block-structured linear surrogate.

    All blocks act on fitting coordinates (see :class:`FieldScaling` and
    :class:`ChannelScaling`); ``kin`` holds the physical kinematics.  For
    ``CCKM_DELTA`` (and ``HYBRID_B`` built on it) ``A_xp``, ``A_xx`` and
    ``b_x`` are the increment-form blocks.  ``base`` records which
    control-coherent form a hybrid inherits its autonomous blocks from.
    """

    kind: Kind
    variable: Variable
    A_pp: np.ndarray
    A_px: np.ndarray
    A_xp: np.ndarray
    A_xx: np.ndarray
    B_p: np.ndarray
    B_x: np.ndarray
    b_x: np.ndarray
    kin: Kinematics | None = None
    scaling: FieldScaling = FieldScaling()
    base: Kind | None = None
    provenance: str = ""
    channel: ChannelScaling = ChannelScaling()

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "variable", Variable(self.variable))
        if self.base is not None:
            object.__setattr__(self, "base", Kind(self.base))
        for name in _BLOCKS:
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        m, n = self.m, self.n
        expected = {"A_pp": (m, m), "A_px": (m, n), "A_xp": (n, m), "A_xx": (n, n),
                    "B_p": (m, m), "B_x": (n, m), "b_x": (n,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.kind is not Kind.DMDC and self.kin is None:
            raise ValueError(f"{self.kind.value} models need actuator kinematics")
        if self.kind is Kind.HYBRID_B and self.base not in (Kind.CCKM_LEVEL, Kind.CCKM_DELTA):
            raise ValueError("hybrid models need a control-coherent base form")
        if self.kin is not None:
            if self.kin.m != m:
                raise ValueError("kinematics dimension differs from the blocks")
            self.channel.check(self.kin)

    @property
    def fit_kin(self) -> Kinematics | None:
        """Kinematics in fitting coordinates."""
        return None if self.kin is None else self.channel.kinematics(self.kin)

    @property
    def m(self) -> int:
        return self.A_pp.shape[0]

    @property
    def n(self) -> int:
        return self.A_xx.shape[0]

    @property
    def delta_form(self) -> bool:
        return self.kind is Kind.CCKM_DELTA or self.base is Kind.CCKM_DELTA

    def field_input_block(self) -> np.ndarray:
        """Matrix multiplying ``u_k`` in the field row of the one-step propagator."""
        if self.kind in (Kind.DMDC, Kind.HYBRID_B):
            return self.B_x
        if self.kind is Kind.CCKM_DELTA:
            return self.A_xp @ self.B_p
        return np.zeros((self.n, self.m))


@dataclass(frozen=True)
class LstsqInfo:
    rank: int
    singular_values: np.ndarray
    degenerate: bool = False


def solve_least_squares(Y, X, rel_tol: float = DEFAULT_REL_TOL, full_output: bool = False):
    """Minimum-norm ``G`` minimising ``||Y - G X||_F`` through a truncated SVD of ``X``.

    Singular values below ``rel_tol * sigma_max`` are discarded.  An all-zero
    ``X`` yields ``G = 0`` and a :class:`DegenerateRegressorWarning`.
    """
    Y = np.atleast_2d(np.asarray(Y, float))
    X = np.atleast_2d(np.asarray(X, float))
    if X.shape[1] < 1 or Y.shape[1] != X.shape[1]:
        raise ValueError(f"need matching sample counts >= 1, got {Y.shape} and {X.shape}")
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("regression data contain non-finite values")
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        warnings.warn("all-zero regressors; returning G = 0", DegenerateRegressorWarning, stacklevel=2)
        G = np.zeros((Y.shape[0], X.shape[0]))
        return (G, LstsqInfo(0, s, True)) if full_output else G
    r = int(np.sum(s > rel_tol * s[0]))
    G = ((Y @ Vt[:r].T) / s[:r]) @ U[:, :r].T
    return (G, LstsqInfo(r, s, False)) if full_output else G


def _split(Z, Zp, U, m):
    Z, Zp, U = (np.atleast_2d(np.asarray(a, float)) for a in (Z, Zp, U))
    if not (Z.shape == Zp.shape and Z.shape[1] == U.shape[1]):
        raise ValueError(f"inconsistent snapshot shapes {Z.shape}, {Zp.shape}, {U.shape}")
    if Z.shape[1] < 1:
        raise ValueError("need at least one snapshot pair")
    if U.shape[0] != m or Z.shape[0] <= m:
        raise ValueError("actuator dimension does not match the controls")
    return Z, Zp, U


def _resolve_channel(channel, kin, field: FieldScaling, variable) -> ChannelScaling:
    if channel is None or kin is None:
        return ChannelScaling() if channel in (None, "auto") else channel
    if isinstance(channel, ChannelScaling):
        return channel
    if channel == "auto":
        shared = field if Variable(variable) is Variable.PRESSURE else None
        return ChannelScaling.default(kin, shared)
    raise ValueError(f"unknown channel scaling {channel!r}")


def _resolve_scaling(scaling, Z, Zp, m) -> FieldScaling:
    if scaling is None:
        return FieldScaling()
    if isinstance(scaling, FieldScaling):
        return scaling
    if scaling == "auto":
        return FieldScaling.from_snapshots(np.hstack([Z[m:], Zp[m:, -1:]]))
    raise ValueError(f"unknown scaling {scaling!r}")


def _prepare(Z, Zp, U, m, kin, variable, scaling, channel):
    Z, Zp, U = _split(Z, Zp, U, m)
    sc = _resolve_scaling(scaling, Z, Zp, m)
    ch = _resolve_channel(channel, kin, sc, variable)
    return (ch.p_forward(Z[:m]), sc.forward(Z[m:]), ch.p_forward(Zp[:m]), sc.forward(Zp[m:]),
            ch.u_forward(U), sc, ch)


def fit_dmdc(Z, Zp, U, *, variable=Variable.PRESSURE, kin: Kinematics | None = None,
             rel_tol: float = DEFAULT_REL_TOL, scaling="auto", channel="auto",
             provenance: str = ""):
    """Joint regression ``z' = A z + B u`` on the augmented state (every block free)."""
    m = np.atleast_2d(U).shape[0]
    P, X, Pp, Xp, Us, sc, ch = _prepare(Z, Zp, U, m, kin, variable, scaling, channel)
    G = solve_least_squares(np.vstack([Pp, Xp]), np.vstack([P, X, Us]), rel_tol)
    n = X.shape[0]
    A, B = G[:, :m + n], G[:, m + n:]
    return SurrogateModel(Kind.DMDC, variable, A[:m, :m], A[:m, m:], A[m:, :m], A[m:, m:],
                          B[:m], B[m:], np.zeros(n), kin, sc, None, provenance, ch)


def fit_cckm_level(Z, Zp, U, kin: Kinematics, *, variable=Variable.PRESSURE,
                   rel_tol: float = DEFAULT_REL_TOL, scaling="auto", channel="auto",
                   provenance: str = ""):
    """Fit ``x' = A_xp p + A_xx x`` with the actuator rows fixed by ``kin`` and zero bottom-B."""
    m = kin.m
    P, X, _, Xp, _, sc, ch = _prepare(Z, Zp, U, m, kin, variable, scaling, channel)
    G = solve_least_squares(Xp, np.vstack([P, X]), rel_tol)
    A_pp, B_p = actuator_matrices(ch.kinematics(kin))
    n = X.shape[0]
    return SurrogateModel(Kind.CCKM_LEVEL, variable, A_pp, np.zeros((m, n)), G[:, :m], G[:, m:],
                          B_p, np.zeros((n, m)), np.zeros(n), kin, sc, None, provenance, ch)


def fit_cckm_delta(Z, Zp, U, kin: Kinematics, *, variable=Variable.SATURATION,
                   rel_tol: float = DEFAULT_REL_TOL, scaling="auto", channel="auto",
                   provenance: str = ""):
    """Fit ``x' - x = A_xp dp + A_xx x + b_x`` with ``dp`` taken from the kinematics."""
    m = kin.m
    P, X, _, Xp, Us, sc, ch = _prepare(Z, Zp, U, m, kin, variable, scaling, channel)
    fkin = ch.kinematics(kin)
    dP = actuator_increment(fkin, P, Us)
    ones = np.ones((1, X.shape[1]))
    G = solve_least_squares(Xp - X, np.vstack([dP, X, ones]), rel_tol)
    A_pp, B_p = actuator_matrices(fkin)
    n = X.shape[0]
    return SurrogateModel(Kind.CCKM_DELTA, variable, A_pp, np.zeros((m, n)), G[:, :m],
                          G[:, m:m + n], B_p, np.zeros((n, m)), G[:, m + n], kin, sc, None,
                          provenance, ch)


def fit_hybrid_b(dmdc: SurrogateModel, cckm: SurrogateModel) -> SurrogateModel:
    """Control-coherent autonomous blocks with the DMDc same-step input path grafted on."""
    if dmdc.kind is not Kind.DMDC:
        raise ValueError("first argument must be a DMDc model")
    if cckm.kind not in (Kind.CCKM_LEVEL, Kind.CCKM_DELTA):
        raise ValueError("second argument must be a control-coherent model")
    if dmdc.variable is not cckm.variable:
        raise ValueError("models describe different variables")
    if dmdc.scaling != cckm.scaling or dmdc.channel != cckm.channel \
            or dmdc.provenance != cckm.provenance \
            or dmdc.B_x.shape != (cckm.n, cckm.m):
        raise ValueError("models were not fitted on the same data")
    return dataclasses.replace(cckm, kind=Kind.HYBRID_B, B_x=dmdc.B_x, base=cckm.kind)


@dataclass(frozen=True)
class FitReport:
    """Teacher-forced training reconstruction and regression spectrum summary."""

    kind: Kind
    variable: Variable
    mae_scaled: float
    mae: float
    fpce_pct: float
    rank: int
    sigma_max: float
    sigma_min_kept: float

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kind"], d["variable"] = self.kind.value, self.variable.value
        return d


def _regressors(model: SurrogateModel, P, X, Us):
    """Regressor matrix the model kind was (or, for hybrids, whose base was) fitted on."""
    kind = model.base if model.kind is Kind.HYBRID_B else model.kind
    if kind is Kind.DMDC:
        return np.vstack([P, X, Us])
    if kind is Kind.CCKM_LEVEL:
        return np.vstack([P, X])
    dP = actuator_increment(model.fit_kin, P, Us)
    return np.vstack([dP, X, np.ones((1, X.shape[1]))])


def fit_report(model: SurrogateModel, Z, Zp, U, rel_tol: float = DEFAULT_REL_TOL) -> FitReport:
    """Teacher-forced one-step reconstruction error on the training pairs.

    ``mae_scaled`` is measured in standardized field units; ``mae`` in SI.
    """
    from .surrogate import teacher_forced
    m = model.m
    Z, Zp, U = _split(Z, Zp, U, m)
    _, x_pred = teacher_forced(model, Z[:m], Z[m:], U)
    xs_pred = model.scaling.forward(x_pred)
    xs_true = model.scaling.forward(Zp[m:])
    err = x_pred - Zp[m:]
    ref = np.linalg.norm(Zp[m:])
    regs = _regressors(model, model.channel.p_forward(Z[:m]), model.scaling.forward(Z[m:]),
                       model.channel.u_forward(U))
    _, info = solve_least_squares(np.zeros((1, regs.shape[1])), regs, rel_tol, full_output=True)
    kept = info.singular_values[:info.rank]
    return FitReport(model.kind, model.variable,
                     float(np.mean(np.abs(xs_pred - xs_true))),
                     float(np.mean(np.abs(err))),
                     float(100 * np.linalg.norm(err) / ref) if ref > 0 else float("nan"),
                     info.rank, float(kept[0]) if kept.size else 0.0,
                     float(kept[-1]) if kept.size else 0.0)


# -- serialization ---------------------------------------------------------

def _header(model: SurrogateModel) -> dict:
    return {
        "kind": model.kind.value,
        "variable": model.variable.value,
        "m": model.m,
        "n": model.n,
        "base": model.base.value if model.base else None,
        "kinematics": model.kin.to_dict() if model.kin else None,
        "scaling": {"mean": model.scaling.mean, "scale": model.scaling.scale},
        "channel": dataclasses.asdict(model.channel),
        "provenance": model.provenance,
        "blocks": [[name, list(getattr(model, name).shape)] for name in _BLOCKS],
        "dtype": "<f8",
        "order": "C",
    }


def save_model(model: SurrogateModel, path) -> Path:
    """Write ``path`` (binary, magic + version + JSON header + row-major float64 blocks)
    and a ``path.json`` metadata sidecar."""
    path = Path(path)
    header = json.dumps(_header(model), sort_keys=True).encode()
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for name in _BLOCKS:
            fh.write(np.ascontiguousarray(getattr(model, name), dtype="<f8").tobytes())
    meta = _header(model)
    meta["format_version"] = FORMAT_VERSION
    meta["norms"] = {name: float(np.linalg.norm(getattr(model, name))) for name in _BLOCKS}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_model(path) -> SurrogateModel:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a surrogate model file")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    header = json.loads(raw[16:16 + hlen])
    offset = 16 + hlen
    blocks = {}
    for name, shape in header["blocks"]:
        count = int(np.prod(shape))
        blocks[name] = np.frombuffer(raw, "<f8", count, offset).reshape(shape).copy()
        offset += 8 * count
    if offset != len(raw):
        raise ValueError(f"{path}: trailing or missing data")
    kin = Kinematics.from_dict(header["kinematics"]) if header["kinematics"] else None
    return SurrogateModel(
        Kind(header["kind"]), Variable(header["variable"]), kin=kin,
        scaling=FieldScaling(**header["scaling"]),
        base=Kind(header["base"]) if header["base"] else None,
        provenance=header["provenance"], channel=ChannelScaling(**header["channel"]),
        **blocks)
