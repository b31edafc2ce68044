"""Known actuator kinematics for rate- and BHP-controlled wells.

Rate mode integrates the commanded rate into a cumulative volume
(``p' = p + dt u``); BHP mode is a first-order leaky integrator of gain
``lam`` (``p' = p + lam (u - p)``), which degenerates to a passthrough
for ``lam = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Mode

__all__ = ["Kinematics", "actuator_matrices", "propagate_actuator", "actuator_increment"]


@dataclass(frozen=True)
class Kinematics:
    mode: Mode
    dt: float
    lam: float = 1.0
    m: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.m < 1:
            raise ValueError("actuator dimension must be >= 1")
        if self.mode is Mode.BHP and not 0 < self.lam <= 1:
            raise ValueError(f"BHP mode needs 0 < lam <= 1, got {self.lam}")

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "dt": self.dt, "lam": self.lam, "m": self.m}

    @classmethod
    def from_dict(cls, d: dict) -> "Kinematics":
        return cls(Mode(d["mode"]), float(d["dt"]), float(d["lam"]), int(d["m"]))


def actuator_matrices(kin: Kinematics):
    """Return ``(A_pp, B_p)``: ``(I, dt I)`` in rate mode, ``((1-lam) I, lam I)`` in BHP mode."""
    eye = np.eye(kin.m)
    if kin.mode is Mode.RATE:
        return eye.copy(), kin.dt * eye
    if not 0 < kin.lam <= 1:
        raise ValueError(f"BHP mode needs 0 < lam <= 1, got {kin.lam}")
    return (1.0 - kin.lam) * eye, kin.lam * eye


def _as_vectors(kin, p, u):
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=float)
    if p.shape[:1] != (kin.m,) or u.shape[:1] != (kin.m,):
        raise ValueError(f"expected actuator/control vectors of length {kin.m}, "
                         f"got shapes {p.shape} and {u.shape}")
    return p, u


def actuator_increment(kin: Kinematics, p_k, u_k) -> np.ndarray:
    """``dt u`` in rate mode, ``lam (u - p)`` in BHP mode.

    Accepts single vectors of length ``m`` or ``(m, K)`` column stacks.
    """
    p, u = _as_vectors(kin, p_k, u_k)
    if kin.mode is Mode.RATE:
        return kin.dt * u
    return kin.lam * (u - p)


def propagate_actuator(kin: Kinematics, p_k, u_k) -> np.ndarray:
    """One step of ``p' = A_pp p + B_p u``.

    Evaluated as ``p + increment`` so the increment law and the propagator
    agree bit-for-bit; for rate mode this is literally ``1*p + dt*u``.
    """
    p, _ = _as_vectors(kin, p_k, u_k)
    return p + actuator_increment(kin, p_k, u_k)
