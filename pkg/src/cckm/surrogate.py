"""One-step propagation, free-run rollouts and same-step gain diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .actuator import actuator_increment, propagate_actuator
from .core import Mode, Variable
from .ident import Kind, SurrogateModel

__all__ = [
    "SurrogateDivergence", "Rollout", "GainDiagnostics",
    "step_surrogate", "augmented_system", "rollout", "teacher_forced", "same_step_gain",
]


class SurrogateDivergence(FloatingPointError):
    """A surrogate produced a non-finite state."""

    def __init__(self, msg, step=None, block=None):
        super().__init__(msg)
        self.step = step
        self.block = block


def _checked_sum(terms: dict) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        for name, val in terms.items():
            if not np.all(np.isfinite(val)):
                raise SurrogateDivergence(f"non-finite contribution from {name}", block=name)
        total = sum(terms.values())
    if not np.all(np.isfinite(total)):
        worst = max(terms, key=lambda k: np.max(np.abs(terms[k])))
        raise SurrogateDivergence(f"state overflowed; dominant block {worst}", block=worst)
    return total


def step_surrogate(model: SurrogateModel, p_k, x_k, u_k):
    """Advance ``(p_k, x_k)`` by one step in the model's fitting coordinates.

    All three arguments are in fitting coordinates (see
    :class:`~cckm.ident.FieldScaling` and :class:`~cckm.ident.ChannelScaling`).
    Column stacks of shape ``(m, K)`` / ``(n, K)`` are propagated column-wise.
    """
    p = np.asarray(p_k, float)
    x = np.asarray(x_k, float)
    u = np.asarray(u_k, float)
    if p.shape[:1] != (model.m,) or u.shape[:1] != (model.m,) or x.shape[:1] != (model.n,):
        raise ValueError(f"dimension mismatch: p {p.shape}, x {x.shape}, u {u.shape} "
                         f"for m={model.m}, n={model.n}")
    bias = model.b_x if x.ndim == 1 else model.b_x[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        if model.kind is Kind.DMDC:
            p_next = _checked_sum({"A_pp": model.A_pp @ p, "A_px": model.A_px @ x,
                                   "B_p": model.B_p @ u})
            x_next = _checked_sum({"A_xp": model.A_xp @ p, "A_xx": model.A_xx @ x,
                                   "B_x": model.B_x @ u})
            return p_next, x_next

        kin = model.fit_kin
        p_next = propagate_actuator(kin, p, u)
        if not model.delta_form:
            terms = {"A_xp": model.A_xp @ p, "A_xx": model.A_xx @ x}
            if model.kind is Kind.HYBRID_B:
                terms["B_x"] = model.B_x @ u
            return p_next, _checked_sum(terms)

        if model.kind is Kind.CCKM_DELTA:
            dp = actuator_increment(kin, p, u)
            terms = {"x": x, "A_xp": model.A_xp @ dp, "A_xx": model.A_xx @ x, "b_x": bias}
        else:
            # hybrid on the increment form: coherent input path replaced by the DMDc bottom-B
            terms = {"x": x, "A_xp": model.A_xp @ ((model.A_pp - np.eye(model.m)) @ p),
                     "A_xx": model.A_xx @ x, "b_x": bias, "B_x": model.B_x @ u}
        return p_next, _checked_sum(terms)


def augmented_system(model: SurrogateModel):
    """Assemble ``(A, B, c)`` of ``z' = A z + B u + c`` for any model kind."""
    m, n = model.m, model.n
    if model.delta_form:
        A = np.block([[model.A_pp, np.zeros((m, n))],
                      [model.A_xp @ (model.A_pp - np.eye(m)), np.eye(n) + model.A_xx]])
        c = np.concatenate([np.zeros(m), model.b_x])
    else:
        A = np.block([[model.A_pp, model.A_px], [model.A_xp, model.A_xx]])
        c = np.zeros(m + n)
    B = np.vstack([model.B_p, model.field_input_block()])
    return A, B, c


@dataclass(frozen=True)
class Rollout:
    """Free-run prediction in physical units; ``diverged_at`` marks a blow-up step."""

    p_pred: np.ndarray
    x_pred: np.ndarray
    kind: Kind
    variable: Variable
    diverged_at: int | None = None
    diverged_block: str | None = None

    @property
    def steps(self) -> int:
        return len(self.p_pred) - 1

    def clamped(self) -> np.ndarray:
        """Field series clipped to physical bounds, for plotting only."""
        if self.variable is Variable.SATURATION:
            return np.clip(self.x_pred, 0.0, 1.0)
        return self.x_pred


def _physical_actuator(model: SurrogateModel, p, u, p_fit_next):
    # coherent kinds apply the known law in physical units so the channel is exact
    if model.kind is Kind.DMDC:
        return model.channel.p_inverse(p_fit_next)
    return propagate_actuator(model.kin, p, u)


def rollout(model: SurrogateModel, p_0, x_0, U, *, allow_divergence: bool = False) -> Rollout:
    """Iterate :func:`step_surrogate` from ``(p_0, x_0)`` (physical units) under controls ``U``.

    ``U`` is ``(K, m)`` or a length-``K`` sequence for ``m = 1``.  No
    re-anchoring to truth takes place.  On a non-finite state a
    :class:`SurrogateDivergence` carrying the step index is raised, unless
    ``allow_divergence`` is set, in which case the rollout is truncated
    and the failure recorded on the result.
    """
    U = np.asarray(U, float).reshape(-1, model.m)
    K = len(U)
    p = np.empty((K + 1, model.m))
    ps = np.empty((K + 1, model.m))
    xs = np.empty((K + 1, model.n))
    p[0] = np.asarray(p_0, float).reshape(model.m)
    ps[0] = model.channel.p_forward(p[0])
    xs[0] = model.scaling.forward(np.asarray(x_0, float).reshape(model.n))
    Us = model.channel.u_forward(U)
    for k in range(K):
        try:
            p_fit, xs[k + 1] = step_surrogate(model, ps[k], xs[k], Us[k])
            p[k + 1] = _physical_actuator(model, p[k], U[k], p_fit)
            ps[k + 1] = p_fit if model.kind is Kind.DMDC else model.channel.p_forward(p[k + 1])
        except SurrogateDivergence as exc:
            exc.step = k + 1
            exc.args = (f"{model.kind.value} rollout diverged at step {k + 1}: {exc.args[0]}",)
            if not allow_divergence:
                raise
            return Rollout(p[:k + 1].copy(), model.scaling.inverse(xs[:k + 1]), model.kind,
                           model.variable, k + 1, exc.block)
    return Rollout(p, model.scaling.inverse(xs), model.kind, model.variable)


def teacher_forced(model: SurrogateModel, P, X, U, *, scaled: bool = False):
    """One-step predictions from true states; inputs are column stacks ``(m|n, K)``.

    With ``scaled=False`` inputs and outputs are physical; otherwise all
    are in fitting coordinates.
    """
    P = np.atleast_2d(np.asarray(P, float))
    X = np.asarray(X, float)
    U = np.atleast_2d(np.asarray(U, float))
    if scaled:
        return step_surrogate(model, P, X, U)
    p_fit, xs_next = step_surrogate(model, model.channel.p_forward(P), model.scaling.forward(X),
                                    model.channel.u_forward(U))
    return _physical_actuator(model, P, U, p_fit), model.scaling.inverse(xs_next)


@dataclass(frozen=True)
class GainDiagnostics:
    """Frobenius norms of the same-step input paths, in fitting coordinates.

    ``norm_bottom_b``: DMDc field input block (standardized field per
    fitting unit of ``u``); ``norm_coherent_path``: ``A_xp B_p`` of the
    coherent model; ``norm_g``: their difference.
    """

    norm_bottom_b: float
    norm_coherent_path: float
    norm_g: float
    units: str = ""

    def to_dict(self) -> dict:
        return {"norm_bottom_b": self.norm_bottom_b, "norm_coherent_path": self.norm_coherent_path,
                "norm_g": self.norm_g, "units": self.units}


def same_step_gain(dmdc: SurrogateModel, cckm: SurrogateModel) -> GainDiagnostics:
    if dmdc.kind is not Kind.DMDC or cckm.kind not in (Kind.CCKM_DELTA, Kind.CCKM_LEVEL):
        raise ValueError("expected a DMDc model and a control-coherent model")
    if dmdc.variable is not cckm.variable or dmdc.scaling != cckm.scaling \
            or dmdc.channel != cckm.channel or dmdc.provenance != cckm.provenance:
        raise ValueError("models were not fitted on the same data")
    coherent = cckm.A_xp @ cckm.B_p
    g = dmdc.B_x - coherent
    ch = cckm.channel
    unit = f"(u - {ch.u_offset:.6g}) / {ch.u_scale:.6g} " + ("m3/s" if cckm.kin.mode is Mode.RATE else "Pa")
    return GainDiagnostics(float(np.linalg.norm(dmdc.B_x)), float(np.linalg.norm(coherent)),
                           float(np.linalg.norm(g)), f"standardized {cckm.variable.value} per {unit}")
