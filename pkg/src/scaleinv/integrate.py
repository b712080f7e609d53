"""Adaptive Dormand-Prince 5(4) integration, steady states and step experiments.

The stepping loop is compiled with numba and takes the (compiled) right-hand
side as an argument, so one kernel serves every field in the package.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .kinetics import Field

log = logging.getLogger(__name__)

RTOL = 1e-8
ATOL = 1e-10
STEADY_STATE_TOL = 1e-9
T_MAX = 1e6
HORIZON_START = 200.0
HORIZON_CAP = 1e4
MAX_STEPS = 2_000_000
SAMPLES = 2000
HANDOFF_TOL = 1e-6
SETTLE_TOL = 1e-7

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = np.array([
    [0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
])
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# difference between the 5th and embedded 4th order weights (7 stages, FSAL)
_E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# continuous extension (Shampine), y(t + th) = y + h K^T P [th, th^2, th^3, th^4]
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

# kernel status codes
REACHED_END = 0
STOPPED_STEADY = 1
STEP_BUDGET = 2
STEP_UNDERFLOW = 3
NOT_FINITE = 4


@njit(cache=True)
def _dp54(rhs, p, x0, u, t0, t_end, t_eval, rtol, atol, max_steps, bounded, stop_tol, out_idx):
    n = x0.size
    y = x0.copy()
    ynew = np.empty(n)
    ytmp = np.empty(n)
    ys = np.zeros((t_eval.size, n))
    K = np.zeros((7, n))
    t = t0
    K[0] = rhs(y, u, p)
    n_steps = 0
    clamp_max = 0.0
    ev = 0
    while ev < t_eval.size and t_eval[ev] <= t0:
        ys[ev] = y
        ev += 1
    y_lo = y[out_idx]
    y_hi = y[out_idx]

    if stop_tol > 0.0 and np.max(np.abs(K[0])) < stop_tol:
        return STOPPED_STEADY, ys, ev, t, y, n_steps, clamp_max, y_lo, y_hi

    # initial step (Hairer, Norsett & Wanner II.4)
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d0 = max(d0, abs(y[i]) / sc)
        d1 = max(d1, abs(K[0, i]) / sc)
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-6
    else:
        h = 0.01 * d0 / d1
    h = min(h, t_end - t0)
    for i in range(n):
        ytmp[i] = y[i] + h * K[0, i]
    f1 = rhs(ytmp, u, p)
    d2 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d2 = max(d2, abs(f1[i] - K[0, i]) / sc / h)
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    h = min(100 * h, h1, t_end - t0)

    status = REACHED_END
    rejected = False
    while t < t_end:
        if n_steps >= max_steps:
            status = STEP_BUDGET
            break
        if h < 1e-14 * max(1.0, abs(t)):
            status = STEP_UNDERFLOW
            break
        if t + h > t_end:
            h = t_end - t
        for s in range(1, 6):
            for i in range(n):
                acc = y[i]
                for j in range(s):
                    acc += h * _A[s, j] * K[j, i]
                ytmp[i] = acc
            K[s] = rhs(ytmp, u, p)
        for i in range(n):
            acc = y[i]
            for j in range(6):
                acc += h * _B[j] * K[j, i]
            ynew[i] = acc
        K[6] = rhs(ynew, u, p)
        en = 0.0
        for i in range(n):
            e = 0.0
            for j in range(7):
                e += _E[j] * K[j, i]
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            r = abs(h * e) / sc
            if not r <= en:
                en = r
        if not np.isfinite(en):
            if h < 1e-14 * max(1.0, abs(t)):
                status = NOT_FINITE
                break
            h *= 0.1
            rejected = True
            continue
        if en > 1.0:
            h *= max(0.2, 0.9 * en ** -0.2)
            rejected = True
            continue

        # accepted: dense output for requested times in (t, t + h]
        t_new = t + h
        while ev < t_eval.size and t_eval[ev] <= t_new:
            th = (t_eval[ev] - t) / h
            for i in range(n):
                acc = 0.0
                for j in range(7):
                    acc += (_P[j, 0] + th * (_P[j, 1] + th * (_P[j, 2] + th * _P[j, 3]))) * K[j, i]
                ys[ev, i] = y[i] + h * th * acc
            yi = ys[ev, out_idx]
            if yi < y_lo:
                y_lo = yi
            if yi > y_hi:
                y_hi = yi
            ev += 1

        clamped = False
        if bounded:
            for i in range(n):
                if ynew[i] < 0.0:
                    clamp_max = max(clamp_max, -ynew[i])
                    ynew[i] = 0.0
                    clamped = True
                elif ynew[i] > 1.0:
                    clamp_max = max(clamp_max, ynew[i] - 1.0)
                    ynew[i] = 1.0
                    clamped = True
        if clamped:
            K[0] = rhs(ynew, u, p)
        else:
            K[0] = K[6]
        t = t_new
        y[:] = ynew
        n_steps += 1
        if y[out_idx] < y_lo:
            y_lo = y[out_idx]
        if y[out_idx] > y_hi:
            y_hi = y[out_idx]

        if stop_tol > 0.0:
            fmax = 0.0
            for i in range(n):
                fmax = max(fmax, abs(K[0, i]))
            if fmax < stop_tol:
                status = STOPPED_STEADY
                break

        fac = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
        if rejected:
            fac = min(1.0, fac)
            rejected = False
        h *= fac
    return status, ys, ev, t, y, n_steps, clamp_max, y_lo, y_hi


class IntegrationError(RuntimeError):
    """The integrator could not advance (step underflow, budget or overflow)."""

    def __init__(self, message, status, t_reached):
        super().__init__(message)
        self.status = status
        self.t_reached = t_reached


@dataclass(frozen=True)
class InputSignal:
    """Piecewise-constant input: ``levels[i]`` holds from ``switch_times[i]``."""

    levels: tuple[float, ...]
    switch_times: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        if len(self.levels) != len(self.switch_times):
            raise ValueError("one level per switch time required")
        if list(self.switch_times) != sorted(self.switch_times):
            raise ValueError("switch times must be increasing")

    @classmethod
    def constant(cls, u: float) -> "InputSignal":
        return cls((float(u),), (0.0,))

    def at(self, t) -> np.ndarray:
        idx = np.searchsorted(np.asarray(self.switch_times), np.asarray(t), side="right") - 1
        return np.asarray(self.levels)[np.clip(idx, 0, None)]


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    input: InputSignal
    n_steps: int = 0
    clamp_max: float = 0.0
    output_range: tuple[float, float] = (np.nan, np.nan)
    equilibrated: bool = True
    output_index: int = 2
    meta: dict = field(default_factory=dict)

    @property
    def y(self) -> np.ndarray:
        return self.states[:, self.output_index]

    def to_csv(self, path) -> None:
        write_trajectory_csv(self, path)


def uniform_grid(t_end: float, samples: int = SAMPLES) -> np.ndarray:
    return np.linspace(0.0, t_end, samples)


def integrate(
    fld: Field,
    x0,
    u,
    t_end: float,
    rtol: float = RTOL,
    atol: float = ATOL,
    t_eval=None,
    samples: int = SAMPLES,
    max_steps: int = MAX_STEPS,
) -> Trajectory:
    """Integrate ``fld`` from ``x0`` over [0, t_end] under input ``u``.

    ``u`` is a number or an :class:`InputSignal`; integration restarts at
    every input switch. States are reported at ``t_eval`` (default: a uniform
    grid of ``samples`` points).
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    signal = u if isinstance(u, InputSignal) else InputSignal.constant(u)
    t_eval = uniform_grid(t_end, samples) if t_eval is None else np.asarray(t_eval, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    bounds = [s for s in signal.switch_times if 0 < s < t_end] + [t_end]
    starts = [0.0] + bounds[:-1]
    levels = [float(signal.at(s)) for s in starts]
    out = np.empty((t_eval.size, fld.dim))
    filled = 0
    steps = 0
    clamp = 0.0
    lo, hi = np.inf, -np.inf
    for t0, t1, level in zip(starts, bounds, levels):
        seg = t_eval[(t_eval >= t0) & (t_eval <= t1)] if t0 == 0 else t_eval[(t_eval > t0) & (t_eval <= t1)]
        status, ys, ev, t_reached, x, n, cm, ylo, yhi = _dp54(
            fld.rhs, fld.params, x, level, t0, t1, seg, rtol, atol, max_steps - steps, fld.bounded, 0.0,
            fld.output_index)
        if status != REACHED_END:
            raise IntegrationError(_status_text(status, t_reached), status, t_reached)
        out[filled:filled + ev] = ys[:ev]
        filled += ev
        steps += n
        clamp = max(clamp, cm)
        lo, hi = min(lo, ylo), max(hi, yhi)
    if clamp > 0:
        log.debug("clamped states back into [0, 1] by up to %.3g", clamp)
    return Trajectory(t_eval, out[:filled], signal, steps, clamp, (lo, hi), True, fld.output_index)


def _status_text(status: int, t: float) -> str:
    return {
        STEP_BUDGET: f"step budget exhausted at t={t:.6g}",
        STEP_UNDERFLOW: f"step size underflow at t={t:.6g} (stiff)",
        NOT_FINITE: f"non-finite state at t={t:.6g}",
    }.get(status, f"integrator status {status} at t={t:.6g}")


# --- steady states --------------------------------------------------------------


class SteadyStateClass(str, enum.Enum):
    CONVERGED = "Converged"
    OSCILLATORY = "Oscillatory"
    TIMED_OUT = "TimedOut"
    STIFF_FAILED = "StiffFailed"


@dataclass
class SteadyStateResult:
    state: np.ndarray
    residual: float
    converged: bool
    classification: SteadyStateClass
    t_reached: float = 0.0
    newton_iterations: int = 0


def newton_refine(fld: Field, x, u, tol=1e-13, max_iter=50):
    """Damped Newton on f(x, u) = 0. Returns (x, residual, iterations, ok)."""
    x = np.asarray(x, dtype=float).copy()
    r = fld(x, u)
    res = float(np.max(np.abs(r)))
    for it in range(max_iter):
        if res < tol:
            return x, res, it, True
        J = fld.jacobian(x, u)
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return x, res, it, False
        if not np.all(np.isfinite(dx)):
            return x, res, it, False
        lam = 1.0
        while lam > 1e-6:
            xn = x + lam * dx
            if fld.bounded and (xn.min() < 0 or xn.max() > 1):
                lam *= 0.5
                continue
            rn = fld(xn, u)
            resn = float(np.max(np.abs(rn)))
            if resn < res:
                break
            lam *= 0.5
        else:
            return x, res, it, res < tol
        x, r, res = xn, rn, resn
    return x, res, max_iter, res < tol


def find_steady_state(
    fld: Field,
    u: float,
    x_guess,
    tol: float = STEADY_STATE_TOL,
    t_max: float = T_MAX,
    rtol: float = RTOL,
    atol: float = ATOL,
    max_steps: int = MAX_STEPS,
    handoff_tol: float = HANDOFF_TOL,
) -> SteadyStateResult:
    """Relax to equilibrium by integration, then polish with damped Newton.

    Integration stops once the residual drops below ``handoff_tol``; Newton
    then has to bring it below ``tol``. Round-off in the integrator keeps the
    residual of stiff circuits from ever reaching ``tol`` on its own. If
    Newton fails, integration resumes with a 100x tighter hand-off.
    """
    x = np.asarray(x_guess, dtype=float).copy()
    t = 0.0
    steps = 0
    handoff = max(handoff_tol, tol)
    iters = 0
    while True:
        status, _, _, t, x, n, _, _, _ = _dp54(
            fld.rhs, fld.params, x, float(u), t, 0.8 * t_max, np.empty(0), rtol, atol, max_steps - steps,
            fld.bounded, handoff, fld.output_index)
        steps += n
        if status in (STEP_BUDGET, STEP_UNDERFLOW, NOT_FINITE):
            return SteadyStateResult(x, _residual(fld, x, u), False, SteadyStateClass.STIFF_FAILED, t)
        if status == REACHED_END:
            break
        xr, res, it, ok = newton_refine(fld, x, u)
        iters += it
        if ok and res < tol:
            return SteadyStateResult(xr, res, True, SteadyStateClass.CONVERGED, t, iters)
        if handoff <= tol:
            break
        handoff = max(handoff / 100, tol)
    res = _residual(fld, x, u)
    if res < tol:
        return SteadyStateResult(x, res, True, SteadyStateClass.CONVERGED, t, iters)
    if t < t_max:
        window = np.linspace(t, t_max, 400)
        status, ys, ev, t, x, n, _, _, _ = _dp54(
            fld.rhs, fld.params, x, float(u), t, t_max, window, rtol, atol, max(max_steps - steps, 1),
            fld.bounded, 0.0, fld.output_index)
        if status in (STEP_BUDGET, STEP_UNDERFLOW, NOT_FINITE):
            return SteadyStateResult(x, _residual(fld, x, u), False, SteadyStateClass.STIFF_FAILED, t)
        if _is_oscillating(ys[:ev], tol):
            return SteadyStateResult(x, _residual(fld, x, u), False, SteadyStateClass.OSCILLATORY, t, iters)
    return SteadyStateResult(x, _residual(fld, x, u), False, SteadyStateClass.TIMED_OUT, t, iters)


def _residual(fld: Field, x, u) -> float:
    return float(np.max(np.abs(fld(x, u))))


def _is_oscillating(window: np.ndarray, tol: float) -> bool:
    """Bounded sustained motion: large peak-to-peak with repeated reversals."""
    if window.shape[0] < 3:
        return False
    for comp in window.T:
        if np.ptp(comp) <= 10 * tol:
            continue
        d = np.diff(comp)
        d = d[np.abs(d) > 0]
        reversals = np.count_nonzero(np.diff(np.sign(d)) != 0)
        if reversals >= 2:
            return True
    return False


# --- step experiments -------------------------------------------------------------


class PreAdaptationError(RuntimeError):
    def __init__(self, message, result: SteadyStateResult):
        super().__init__(message)
        self.result = result


def step_response(
    fld: Field,
    u0: float,
    u1: float,
    horizon: float = HORIZON_START,
    horizon_cap: float = HORIZON_CAP,
    samples: int = SAMPLES,
    x_guess=None,
    tol: float = STEADY_STATE_TOL,
    rtol: float = RTOL,
    atol: float = ATOL,
    max_steps: int = MAX_STEPS,
    t_max: float = T_MAX,
    pre: SteadyStateResult | None = None,
    settle_tol: float = SETTLE_TOL,
) -> Trajectory:
    """Response to a step u0 -> u1 at t = 0 from the state pre-adapted to u0.

    The horizon doubles (up to ``horizon_cap``) until the final state lies
    within ``settle_tol`` of the equilibrium for u1 (Newton-located from the
    endpoint); ``Trajectory.equilibrated`` records whether it did.
    """
    if pre is None:
        guess = np.full(fld.dim, 0.5) if x_guess is None else x_guess
        pre = find_steady_state(fld, u0, guess, tol, t_max, rtol, atol, max_steps)
    if not pre.converged:
        raise PreAdaptationError(f"no steady state at u0={u0} ({pre.classification.value})", pre)
    x0 = pre.state
    H = horizon
    while True:
        traj = integrate(fld, x0, u1, H, rtol, atol, samples=samples, max_steps=max_steps)
        settled = _settled(fld, traj.states[-1], u1, settle_tol)
        if settled or H >= horizon_cap:
            traj.equilibrated = settled
            traj.input = InputSignal((u0, u1), (-np.inf, 0.0))
            traj.meta.update(u0=u0, u1=u1, horizon=H, pre_state=x0)
            return traj
        H = min(2 * H, horizon_cap)


def _settled(fld: Field, x_end, u, settle_tol) -> bool:
    x_star, _, _, ok = newton_refine(fld, x_end, u)
    return bool(ok and np.max(np.abs(x_star - x_end)) < settle_tol)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    names = ("x_A", "x_B", "x_C") if traj.states.shape[1] == 3 else tuple(
        f"x{i}" for i in range(traj.states.shape[1]))
    u = traj.input.at(traj.times)
    data = np.column_stack([traj.times, traj.states, u])
    with open(path, "w") as fh:
        fh.write(",".join(("t",) + names + ("u",)) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_trajectory_csv(path) -> Trajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t, states, u = data[:, 0], data[:, 1:-1], data[:, -1]
    change = np.flatnonzero(np.diff(u)) + 1
    levels = tuple(u[np.r_[0, change]].tolist()) if u.size else (0.0,)
    switches = tuple(t[np.r_[0, change]].tolist()) if u.size else (0.0,)
    return Trajectory(t, states, InputSignal(levels, switches))
