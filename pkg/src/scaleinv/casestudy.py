"""Dictyostelium cAMP / Ras adaptation model and its three-variable core.

The six-variable model pools two receptor populations R1, R2 into an
internal signal u = R1 + R2 that drives an incoherent feedforward loop::

    R1'  = k_R1 (v + r1) (R1_tot - R1) - k_-R1 R1
    R2'  = k_R2 (v + r2) (R2_tot - R2) - k_-R2 R2
    GEF' = k_GEF u - k_-GEF GEF
    GAP' = k_GAP u - k_-GAP GAP
    Ras' = k_RAS GEF (RAS_tot - Ras) - k_-RAS GAP Ras
    RBD' = k_off (RBD_tot - RBD) - k_on Ras RBD

v is the external cAMP concentration in nM and RasGTP is the output. When
v >> r1, r2 and receptor occupancy is low, u is a linear filter of v and the
(GEF, GAP, Ras) core is a three-node circuit whose output relaxes fast.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from numba import njit

from .integrate import SAMPLES, Trajectory, find_steady_state, integrate, step_response
from .kinetics import Field
from .metrics import common_grid, resample

STATE_NAMES = ("R1", "R2", "GEF", "GAP", "RasGTP", "RBDcyt")
OUTPUT = 4
DEFAULT_STEPS = ((1.0, 2.0), (2.0, 4.0))
V_PRE = 1.0
# relative timescale margin below which r1, r2 are not negligible
REGIME_FACTOR = 10.0


class RegimeWarning(UserWarning):
    """Input too small for the linear-receptor approximation."""


@dataclass(frozen=True)
class TakedaParams:
    """Best-fit constants; rates in 1/s, r1, r2 in nM, k_R1, k_R2 in 1/(nM s)."""

    R1_tot: float = 0.1
    R2_tot: float = 0.9
    r1: float = 0.012
    r2: float = 0.115
    k_R1: float = 0.00267
    km_R1: float = 0.16
    k_R2: float = 0.00244
    km_R2: float = 1.1
    k_GEF: float = 0.04
    km_GEF: float = 0.4
    k_GAP: float = 0.01
    km_GAP: float = 0.1
    RAS_tot: float = 1.0
    k_RAS: float = 390.0
    km_RAS: float = 3126.0
    RBD_tot: float = 1.0
    k_RBD_off: float = 0.53
    k_RBD_on: float = 1.0

    def __post_init__(self):
        bad = [f.name for f in fields(self) if not getattr(self, f.name) >= 0]
        if bad:
            raise ValueError(f"parameters must be non-negative: {', '.join(bad)}")

    def array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=float)


@njit(cache=True)
def takeda_rhs(x, v, p):
    R1, R2, gef, gap, ras, rbd = x
    u = R1 + R2
    return np.array([
        p[4] * (v + p[2]) * (p[0] - R1) - p[5] * R1,
        p[6] * (v + p[3]) * (p[1] - R2) - p[7] * R2,
        p[8] * u - p[9] * gef,
        p[10] * u - p[11] * gap,
        p[13] * gef * (p[12] - ras) - p[14] * gap * ras,
        p[16] * (p[15] - rbd) - p[17] * ras * rbd,
    ])


@njit(cache=True)
def core_rhs(x, u, p):
    gef, gap, ras = x
    return np.array([
        p[8] * u - p[9] * gef,
        p[10] * u - p[11] * gap,
        p[13] * gef * (p[12] - ras) - p[14] * gap * ras,
    ])


@njit(cache=True)
def linear_receptor_rhs(x, v, p):
    # receptors without basal activity or saturation, feeding the core
    R1, R2, gef, gap, ras = x
    u = R1 + R2
    return np.array([
        p[4] * p[0] * v - p[5] * R1,
        p[6] * p[1] * v - p[7] * R2,
        p[8] * u - p[9] * gef,
        p[10] * u - p[11] * gap,
        p[13] * gef * (p[12] - ras) - p[14] * gap * ras,
    ])


@dataclass(frozen=True)
class TakedaModel:
    """Six-variable model with input v (nM cAMP) and output RasGTP."""

    params: TakedaParams = TakedaParams()
    name: str = "takeda"
    notes: str = "km_GAP is the GAP deactivation rate; the GAP activation rate is k_GAP"

    def field(self) -> Field:
        return Field(takeda_rhs, self.params.array(), 6, STATE_NAMES, bounded=False, output_index=OUTPUT)

    def with_params(self, **changes) -> "TakedaModel":
        return replace(self, params=replace(self.params, **changes))

    def to_dict(self) -> dict:
        return {"label": self.name, "params": asdict(self.params), "notes": self.notes}


@dataclass(frozen=True)
class TakedaReduction:
    """The (GEF, GAP, RasGTP) core driven by the pooled receptor signal u."""

    params: TakedaParams = TakedaParams()
    name: str = "takeda-core"

    def field(self) -> Field:
        return Field(core_rhs, self.params.array(), 3, ("GEF", "GAP", "RasGTP"), bounded=False)

    def linear_receptor_field(self) -> Field:
        return Field(linear_receptor_rhs, self.params.array(), 5, STATE_NAMES[:5], bounded=False,
                     output_index=OUTPUT)

    def u_of_v(self, v):
        """Steady pooled signal for cAMP level v under the linear-receptor approximation."""
        p = self.params
        gain = p.k_R1 * p.R1_tot / p.km_R1 + p.k_R2 * p.R2_tot / p.km_R2
        return gain * np.asarray(v, dtype=float)

    def regime_ok(self, v: float) -> bool:
        return v >= REGIME_FACTOR * max(self.params.r1, self.params.r2)


def takeda_reduction(params: TakedaParams | None = None, v_range=(1.0, 4.0)) -> TakedaReduction:
    """Three-variable reduction; warns when ``v_range`` leaves the linear regime."""
    red = TakedaReduction(params or TakedaParams())
    low = min(v_range)
    if not red.regime_ok(low):
        warnings.warn(
            f"v={low:g} nM is below {REGIME_FACTOR:g} x max(r1, r2) = "
            f"{REGIME_FACTOR * max(red.params.r1, red.params.r2):g} nM; basal receptor activity is not negligible",
            RegimeWarning, stacklevel=2)
    return red


def fast_output_ratio(red: TakedaReduction, v: float) -> float:
    """Relaxation rate of RasGTP at steady state over the largest |eigenvalue| of the (GEF, GAP) block."""
    fld = red.field()
    u = float(red.u_of_v(v))
    ss = find_steady_state(fld, u, np.zeros(3))
    J = fld.jacobian(ss.state, u)
    return float(abs(J[2, 2]) / np.max(np.abs(np.linalg.eigvals(J[:2, :2]))))


def takeda_steps(model: TakedaModel | None = None, steps=DEFAULT_STEPS, v_pre: float = V_PRE,
                 samples: int = SAMPLES) -> list[Trajectory]:
    """Step responses, each starting from the state adapted to ``v_pre`` and then to the step's base.

    The system is first equilibrated at ``v_pre``; for a step v0 -> v1 it is
    then held at v0 to equilibrium before the step, so all responses start
    from a pre-adapted background.
    """
    fld = (model or TakedaModel()).field()
    x_pre = find_steady_state(fld, v_pre, np.zeros(6)).state
    out = []
    for v0, v1 in steps:
        pre = find_steady_state(fld, v0, x_pre)
        out.append(step_response(fld, v0, v1, pre=pre, samples=samples))
    return out


def overlap(traj_ref: Trajectory, traj_scaled: Trajectory, samples: int = SAMPLES) -> float:
    """max_t |y_ref - y_scaled| over the transient amplitude of the reference response."""
    grid = common_grid(traj_ref, traj_scaled, samples=samples)
    a = resample(traj_ref, grid)
    b = resample(traj_scaled, grid)
    amplitude = float(np.max(np.abs(a - a[0])))
    if amplitude == 0:
        raise ValueError("reference response does not move")
    return float(np.max(np.abs(a - b))) / amplitude


def reduction_fidelity(model: TakedaModel | None = None, v0: float = 1.0, v1: float = 2.0,
                       samples: int = SAMPLES) -> float:
    """Gap between RasGTP of the full model and of the linear-receptor reduction.

    Both start adapted to ``v0``; the result is the largest difference over
    the full model's transient amplitude.
    """
    model = model or TakedaModel()
    full = step_response(model.field(), v0, v1, samples=samples)
    lin = TakedaReduction(model.params).linear_receptor_field()
    red = step_response(lin, v0, v1, x_guess=np.zeros(5), samples=samples)
    return overlap(full, red, samples)
