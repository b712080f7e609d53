"""Uniform linearizations with fast output (ULFO).

The output node C is eliminated by quasi-steady state: ``h(x_A, x_B)`` is the
root in [0, 1] of the C equation, and the planar system

    (x_A, x_B)' = f(x_A, x_B, u) = F(x_A, x_B, h(x_A, x_B), u)

is checked for the conditions that make a circuit approximately scale
invariant over an input range:

* homogeneous steady states, sigma(p u) = p sigma(u);
* Jacobians A(u) = df/dx and B(u) = df/du that do not depend on u;
* an equilibrium output that depends on x_A / x_B only (no self-loop or
  constitutive contribution to the C equation);
* a C equation that relaxes much faster than the planar dynamics.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit
from numba.core.errors import NumbaWarning
from scipy.linalg import expm

from .integrate import (
    HORIZON_START, SAMPLES, Trajectory, find_steady_state, integrate, newton_refine, step_response,
)
from .kinetics import Circuit, Field, build_rhs
from .metrics import asi_metric

# the integrator kernel cannot be disk-cached once specialised on a closure
warnings.filterwarnings("ignore", message="Cannot cache compiled function", category=NumbaWarning)

U_GRID = (0.3, 0.4, 0.5, 0.6)
U_REF = 0.45
P_SCALE = 5.0 / 3.0
STEPS = ((0.3, 0.36), (0.5, 0.6))
QSS_TOL = 1e-12
LIN_SAMPLES = 20001


@dataclass(frozen=True)
class Thresholds:
    """Pass limits for the individual ULFO conditions."""

    homogeneity: float = 0.10
    jacobian: float = 0.25
    selfloop: float = 0.05
    ratio: float = 0.10
    qss: float = 0.50
    fast_output: float = 1.0


class ReductionError(RuntimeError):
    """The C equation has no bracketed root, so no planar reduction exists."""


# --- QSS root -------------------------------------------------------------------


@njit(cache=True)
def _c_rate(rhs, xa, xb, z, u, p):
    x = np.empty(3)
    x[0] = xa
    x[1] = xb
    x[2] = z
    return rhs(x, u, p)[2]


@njit(cache=True)
def qss_root(rhs, xa, xb, u, p, bounded, tol):
    """Root of the C equation by bisection with Illinois false-position polish.

    Returns NaN when [0, 1] (or [0, inf) for unbounded fields) holds no sign
    change.
    """
    lo = 0.0
    g_lo = _c_rate(rhs, xa, xb, lo, u, p)
    if g_lo == 0.0:
        return lo
    hi = 1.0
    g_hi = _c_rate(rhs, xa, xb, hi, u, p)
    if not bounded:
        while g_hi * g_lo > 0 and hi < 1e12:
            hi *= 2.0
            g_hi = _c_rate(rhs, xa, xb, hi, u, p)
    if g_hi == 0.0:
        return hi
    if g_lo * g_hi > 0 or not (np.isfinite(g_lo) and np.isfinite(g_hi)):
        return np.nan
    # coarse bisection keeps the bracket honest, then false position
    for _ in range(8):
        mid = 0.5 * (lo + hi)
        g = _c_rate(rhs, xa, xb, mid, u, p)
        if g == 0.0:
            return mid
        if (g > 0) == (g_lo > 0):
            lo, g_lo = mid, g
        else:
            hi, g_hi = mid, g
    side = 0
    for _ in range(200):
        z = (lo * g_hi - hi * g_lo) / (g_hi - g_lo)
        if not (lo < z < hi):
            z = 0.5 * (lo + hi)
        g = _c_rate(rhs, xa, xb, z, u, p)
        if abs(g) < tol or hi - lo < 4e-16 * max(1.0, abs(z)):
            return z
        if (g > 0) == (g_lo > 0):
            lo, g_lo = z, g
            if side == -1:
                g_hi *= 0.5
            side = -1
        else:
            hi, g_hi = z, g
            if side == 1:
                g_lo *= 0.5
            side = 1
    return 0.5 * (lo + hi)


@njit(cache=True)
def _qss_many(rhs, xa, xb, u, p, bounded, tol):
    out = np.empty(xa.size)
    for i in range(xa.size):
        out[i] = qss_root(rhs, xa[i], xb[i], u[i], p, bounded, tol)
    return out


@lru_cache(maxsize=None)
def _reduced_rhs(full_rhs, bounded: bool, tol: float):
    @njit
    def rhs(x, u, p):
        z = qss_root(full_rhs, x[0], x[1], u, p, bounded, tol)
        full = np.empty(3)
        full[0] = x[0]
        full[1] = x[1]
        full[2] = z
        return full_rhs(full, u, p)[:2]

    return rhs


# --- reduced system ---------------------------------------------------------------


@dataclass
class ReducedSystem:
    """Planar QSS reduction of a three-variable field (C eliminated)."""

    full: Field
    qss_tol: float = QSS_TOL
    source: object = None
    field: Field = field(init=False)

    def __post_init__(self):
        rhs = _reduced_rhs(self.full.rhs, self.full.bounded, self.qss_tol)
        self.field = Field(
            rhs=rhs,
            params=self.full.params,
            dim=2,
            state_names=self.full.state_names[:2],
            bounded=self.full.bounded,
            jac=self._jac,
            output_index=0,
        )

    def h(self, xa, xb, u=0.0):
        """QSS output; arrays broadcast elementwise."""
        xa, xb, u = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (xa, xb, u)))
        z = _qss_many(self.full.rhs, xa.ravel().copy(), xb.ravel().copy(), u.ravel().copy(),
                      self.full.params, self.full.bounded, self.qss_tol)
        return z.reshape(xa.shape) if xa.ndim else float(z[0])

    def lift(self, x, u=0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = self.h(x[0], x[1], u)
        if not np.isfinite(z):
            raise ReductionError(f"no QSS root for C at x_A={x[0]:.6g}, x_B={x[1]:.6g}")
        return np.array([x[0], x[1], z])

    def __call__(self, x, u) -> np.ndarray:
        return self.field(x, u)

    def _jac(self, x, u, params=None):
        return self.jacobians(x, u)[0]

    def jacobians(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        """(A, B) of the reduced field from the full Jacobian by implicit differentiation."""
        full_x = self.lift(x, u)
        J = self.full.jacobian(full_x, u)
        Fu = self.full.du(full_x, u)
        g_z = J[2, 2]
        if g_z == 0:
            raise ReductionError("C equation is degenerate (zero self-derivative)")
        dh_dx = -J[2, :2] / g_z
        dh_du = -Fu[2] / g_z
        A = J[:2, :2] + np.outer(J[:2, 2], dh_dx)
        B = Fu[:2] + J[:2, 2] * dh_du
        return A, B

    def output(self, states, u=0.0) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        return self.h(states[:, 0], states[:, 1], u)


def qss_solve(fld: Field, x_a: float, x_b: float, u: float = 0.0, tol: float = QSS_TOL) -> float:
    """x_C that zeroes the C equation at fixed (x_A, x_B)."""
    z = qss_root(fld.rhs, float(x_a), float(x_b), float(u), fld.params, fld.bounded, tol)
    if not np.isfinite(z):
        raise ReductionError(f"C equation has no root in range at x_A={x_a}, x_B={x_b}")
    return float(z)


def _as_field(model) -> Field:
    if isinstance(model, Field):
        return model
    if isinstance(model, Circuit):
        return build_rhs(model)
    if hasattr(model, "field"):
        return model.field()
    raise TypeError(f"cannot build a vector field from {type(model).__name__}")


def reduce(model, qss_tol: float = QSS_TOL) -> ReducedSystem:
    """QSS reduction of a circuit, explicit model or three-variable field."""
    fld = _as_field(model)
    if fld.dim != 3:
        raise ReductionError("reduction needs a three-variable field")
    red = ReducedSystem(fld, qss_tol, source=model)
    probe = red.h(0.5, 0.5) if fld.bounded else red.h(1.0, 1.0)
    if not np.isfinite(probe):
        raise ReductionError("C equation lacks a sign change; no QSS reduction")
    return red


# --- steady states and Jacobians -------------------------------------------------


def reduced_steady_state(r: ReducedSystem, u: float, x_guess=None) -> np.ndarray:
    """sigma(u) of the planar system (seeded from the full system)."""
    guess = np.full(3, 0.5) if x_guess is None else np.asarray(x_guess, dtype=float)
    if guess.size == 2:
        guess = r.lift(guess, u)
    full = find_steady_state(r.full, u, guess)
    if not full.converged:
        raise ReductionError(f"no steady state at u={u} ({full.classification.value})")
    x, res, _, ok = newton_refine(r.field, full.state[:2], u, tol=1e-14)
    if not ok and res > 1e-10:
        raise ReductionError(f"reduced Newton failed at u={u} (residual {res:.3g})")
    return x


def sigma_table(r: ReducedSystem, u_list=U_GRID) -> list[tuple[float, np.ndarray]]:
    """``[(u, sigma(u) / u), ...]``."""
    out = []
    guess = None
    for u in u_list:
        x = reduced_steady_state(r, u, guess)
        guess = x
        out.append((float(u), x / u))
    return out


def relative_deviation(values, reference) -> np.ndarray:
    """|v - ref| / |ref| entrywise with 0/0 -> 0 and x/0 -> inf."""
    values = np.asarray(values, dtype=float)
    reference = np.asarray(reference, dtype=float)
    diff = np.abs(values - reference)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = diff / np.abs(reference)
    out = np.where(reference == 0, np.where(diff == 0, 0.0, np.inf), out)
    return out


def jacobian_uniformity(r: ReducedSystem, u_list=U_GRID, u_ref: float = U_REF):
    """Mean relative deviation of A(u), B(u) from A(u_ref), B(u_ref).

    Returns ``(a_err, b_err)`` with shapes (2, 2) and (2,).
    """
    x_ref = reduced_steady_state(r, u_ref)
    A_ref, B_ref = r.jacobians(x_ref, u_ref)
    a_dev, b_dev = [], []
    guess = x_ref
    for u in u_list:
        x = reduced_steady_state(r, u, guess)
        A, B = r.jacobians(x, u)
        a_dev.append(relative_deviation(A, A_ref))
        b_dev.append(relative_deviation(B, B_ref))
    return np.mean(a_dev, axis=0), np.mean(b_dev, axis=0)


def homogeneity_deviation(r: ReducedSystem, u_list=U_GRID, u_ref: float = U_REF) -> float:
    """Largest relative departure of sigma(u)/u from sigma(u_ref)/u_ref."""
    ref = reduced_steady_state(r, u_ref) / u_ref
    return float(max(np.max(relative_deviation(s, ref)) for _, s in sigma_table(r, u_list)))


# --- trajectory-based checks ----------------------------------------------------------


def _field_of(model) -> Field:
    return model.full if isinstance(model, ReducedSystem) else _as_field(model)


def ratio_invariance(model, u0: float, u1: float, p: float = P_SCALE, samples: int = SAMPLES) -> float:
    """max_t |r_p(t) - r_1(t)| / |r_1(t)| for r = x_A / x_B."""
    fld = _field_of(model)
    if p == 1:
        return 0.0
    ref = step_response(fld, u0, u1, samples=samples)
    scaled = step_response(fld, p * u0, p * u1, samples=samples)
    t_end = max(ref.times[-1], scaled.times[-1])
    grid = np.linspace(0.0, t_end, samples)
    ra = _interp_states(ref, grid)
    rb = _interp_states(scaled, grid)
    if np.any(ra[:, 1] <= 0) or np.any(rb[:, 1] <= 0):
        raise ReductionError("x_B reaches zero; ratio undefined")
    r1 = ra[:, 0] / ra[:, 1]
    rp = rb[:, 0] / rb[:, 1]
    return float(np.max(np.abs(rp - r1) / np.abs(r1)))


def _interp_states(traj: Trajectory, grid) -> np.ndarray:
    return np.column_stack([np.interp(grid, traj.times, s) for s in traj.states.T])


def c_term_split(c: Circuit, states) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-sample (x_A terms, x_B terms, self-loop/constitutive terms) of dx_C/dt."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    parts = {"A": np.zeros(len(states)), "B": np.zeros(len(states)), "k": np.zeros(len(states))}
    xc = states[:, 2]
    for t in c.terms_on("C"):
        if t.modulator in ("A", "B", "C"):
            mod = states[:, "ABC".index(t.modulator)]
        elif t.modulator == "u":
            raise ReductionError("input acting on the output node is not supported")
        else:
            mod = np.full(len(states), c.constitutive[t.modulator])
        sub = 1.0 - xc if t.sign > 0 else xc
        rate = t.sign * t.k * mod * sub / (sub + t.K)
        parts[t.modulator if t.modulator in ("A", "B") else "k"] += rate
    return parts["A"], parts["B"], parts["k"]


def selfloop_contribution(c: Circuit, traj: Trajectory) -> float:
    """Peak self-loop/constitutive share of the C equation along a trajectory.

    The peak magnitude of the combined kappa terms is divided by the peak
    magnitude of the individual x_A and x_B terms.
    """
    a, b, k = c_term_split(c, traj.states)
    if not np.any(k):
        return 0.0
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)))
    if scale == 0:
        return np.inf
    return float(np.max(np.abs(k)) / scale)


def qss_error(r: ReducedSystem, traj: Trajectory) -> float:
    """sup_t |x_C(t) - h(x_A(t), x_B(t))| over the output's transient amplitude."""
    u = traj.input.at(traj.times)
    h = r.h(traj.states[:, 0], traj.states[:, 1], u)
    amp = np.max(np.abs(traj.y - traj.y[0]))
    gap = np.max(np.abs(traj.states[:, 2] - h))
    return float(gap / amp) if amp > 0 else (0.0 if gap == 0 else np.inf)


def linear_response(A, B, delta: float, times) -> np.ndarray:
    """Solution of xi' = A xi + B delta, xi(0) = 0, sampled at ``times``."""
    n = A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = np.asarray(B) * delta
    times = np.asarray(times, dtype=float)
    return np.array([expm(M * t)[:n, n] for t in times]) if times.size < 64 else _linear_response_eig(M, n, times)


def _linear_response_eig(M, n, times) -> np.ndarray:
    # uniform grids: propagate with one matrix exponential per step size
    dt = np.diff(times)
    out = np.zeros((times.size, n))
    if np.allclose(dt, dt[0], rtol=1e-12, atol=0):
        step = expm(M * dt[0])
        z = np.zeros(n + 1)
        z[n] = 1.0
        z = expm(M * times[0]) @ z
        out[0] = z[:n]
        for i in range(1, times.size):
            z = step @ z
            out[i] = z[:n]
        return out
    return np.array([expm(M * t)[:n, n] for t in times])


def linearization_error(
    r: ReducedSystem,
    u0: float,
    u1: float,
    u_lin: float | None = None,
    horizon: float | None = None,
    samples: int = LIN_SAMPLES,
) -> np.ndarray:
    """max_t |x^L(t) - x^N(t)| / |x^N(t)| for x_A and x_B after a step u0 -> u1.

    x^N is the full nonlinear trajectory from the u0 equilibrium and x^L =
    sigma(u0) + xi(t), where xi solves xi' = A xi + B (u1 - u0), xi(0) = 0.
    A and B are taken at the equilibrium for ``u_lin`` (default: the top of
    the standard input range), so one linear model serves every step.
    """
    if u1 == u0:
        return np.zeros(2)
    u_lin = max(U_GRID) if u_lin is None else u_lin
    pre = find_steady_state(r.full, u0, np.full(3, 0.5))
    if not pre.converged:
        raise ReductionError(f"no steady state at u={u0} ({pre.classification.value})")
    x0 = pre.state
    A, B = r.jacobians(reduced_steady_state(r, u_lin, x0), u_lin)
    if horizon is None:
        horizon = _settle_horizon(A)
    grid = np.linspace(0.0, horizon, samples)
    nonlinear = integrate(r.full, x0, u1, horizon, t_eval=grid).states[:, :2]
    linear = x0[:2] + linear_response(A, B, u1 - u0, grid)
    return np.max(np.abs(linear - nonlinear) / np.abs(nonlinear), axis=0)


def linearization_table(r: ReducedSystem, steps=STEPS, u_lin: float | None = None) -> list[np.ndarray]:
    """Linearization errors for each step, all against one linear model."""
    return [linearization_error(r, u0, u1, u_lin=u_lin) for u0, u1 in steps]


def _settle_horizon(A) -> float:
    slowest = np.min(np.abs(np.linalg.eigvals(A).real))
    return float(max(100.0, 20.0 / slowest)) if slowest > 0 else HORIZON_START


def fast_output_ratio(r: ReducedSystem, u: float) -> float:
    """|d(x_C')/dx_C| at sigma(u) over the largest |eigenvalue| of A(u).

    The verdict uses the smallest ratio over the input grid.
    """
    x = reduced_steady_state(r, u)
    full = r.lift(x, u)
    J = r.full.jacobian(full, u)
    A, _ = r.jacobians(x, u)
    slow = np.max(np.abs(np.linalg.eigvals(A)))
    return float(abs(J[2, 2]) / slow) if slow > 0 else np.inf


# --- error order -------------------------------------------------------------------------

ORDER_EPS = (0.06, 0.04, 0.02)


@dataclass(frozen=True)
class AsiOrder:
    eps: tuple[float, ...]
    relative: np.ndarray
    absolute: np.ndarray

    @staticmethod
    def shrinking(values) -> bool:
        """True when values strictly decrease along the (shrinking) eps sequence."""
        return bool(np.all(np.diff(values) < 0))


def asi_order(model, eps=ORDER_EPS, u_low: float = 0.3, u_high: float = 0.5, samples: int = SAMPLES) -> AsiOrder:
    """ASI error divided by the perturbation size, for steps u_low -> u_low + eps
    and u_high -> u_high + p eps with p = u_high / u_low.

    ``relative`` uses the pointwise relative difference of the outputs,
    ``absolute`` the largest absolute gap. Both vanish faster than eps for
    an exactly uniform linearization.
    """
    fld = _as_field(model)
    p = u_high / u_low
    rel, ab = [], []
    for e in eps:
        lo = step_response(fld, u_low, u_low + e, samples=samples)
        hi = step_response(fld, u_high, u_high + p * e, samples=samples)
        m = asi_metric(lo, hi, samples=samples)
        rel.append(m.relative_difference / e)
        ab.append(m.max_difference / e)
    return AsiOrder(tuple(eps), np.array(rel), np.array(ab))


# --- verdict ---------------------------------------------------------------------------


@dataclass
class UlfoReport:
    sigma_table: list = field(default_factory=list)
    a_err: np.ndarray | None = None
    b_err: np.ndarray | None = None
    homogeneity_deviation: float = np.nan
    qss_max_error: float = np.nan
    ratio_deviation: float = np.nan
    selfloop_fraction: float = np.nan
    lin_errors: dict = field(default_factory=dict)
    fast_output_ratio: float = np.nan
    flags: dict = field(default_factory=dict)
    reasons: list = field(default_factory=list)
    verdict: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma_table"] = [{"u": u, "sigma_over_u": list(map(float, s))} for u, s in self.sigma_table]
        for key in ("a_err", "b_err"):
            d[key] = None if d[key] is None else np.asarray(d[key]).tolist()
        d["lin_errors"] = {k: list(map(float, v)) for k, v in self.lin_errors.items()}
        return _jsonable(d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def ulfo_verdict(
    model,
    u_grid=U_GRID,
    u_ref: float = U_REF,
    p: float = P_SCALE,
    thresholds: Thresholds = Thresholds(),
) -> UlfoReport:
    """Run every ULFO check on the standard grid and combine them.

    A check that cannot be carried out fails its flag with a reason.
    """
    rep = UlfoReport()
    try:
        r = reduce(model)
    except ReductionError as exc:
        rep.reasons.append(f"reduction: {exc}")
        rep.flags = dict.fromkeys(("homogeneity", "jacobian", "selfloop", "ratio", "qss", "fast_output"), False)
        return rep
    fld = r.full
    lo, hi = min(u_grid), max(u_grid)

    def check(name, fn):
        try:
            return fn()
        except Exception as exc:  # a failed sub-check fails its flag, not the run
            rep.reasons.append(f"{name}: {exc}")
            return None

    sig = check("homogeneity", lambda: sigma_table(r, u_grid))
    if sig is not None:
        rep.sigma_table = sig
        rep.homogeneity_deviation = check("homogeneity", lambda: homogeneity_deviation(r, u_grid, u_ref))
    jac = check("jacobian", lambda: jacobian_uniformity(r, u_grid, u_ref))
    if jac is not None:
        rep.a_err, rep.b_err = jac
    # 20% steps from the bottom of the range and from p times that
    steps = [(lo, 1.2 * lo), (p * lo, 1.2 * p * lo)]
    high_step = steps[-1]
    traj = check("trajectory", lambda: step_response(fld, *high_step))
    if traj is not None:
        rep.qss_max_error = check("qss", lambda: qss_error(r, traj))
        if isinstance(r.source, Circuit):
            rep.selfloop_fraction = selfloop_contribution(r.source, traj)
        else:
            rep.selfloop_fraction = 0.0
    rep.ratio_deviation = check("ratio", lambda: ratio_invariance(r, steps[0][0], steps[0][1], p))
    for u0, u1 in steps:
        err = check("linearization", lambda: linearization_error(r, u0, u1, u_lin=hi))
        if err is not None:
            rep.lin_errors[f"{u0:g}->{u1:g}"] = err
    ratios = check("fast_output", lambda: [fast_output_ratio(r, u) for u in u_grid])
    if ratios is not None:
        rep.fast_output_ratio = float(min(ratios))

    def ok(value, limit):
        return value is not None and np.all(np.isfinite(value)) and bool(np.all(np.asarray(value) <= limit))

    rep.flags = {
        "homogeneity": ok(rep.homogeneity_deviation, thresholds.homogeneity),
        "jacobian": jac is not None and ok(rep.a_err, thresholds.jacobian) and ok(rep.b_err, thresholds.jacobian),
        "selfloop": ok(rep.selfloop_fraction, thresholds.selfloop),
        "ratio": ok(rep.ratio_deviation, thresholds.ratio),
        "qss": ok(rep.qss_max_error, thresholds.qss),
        "fast_output": rep.fast_output_ratio is not None and bool(rep.fast_output_ratio >= thresholds.fast_output),
    }
    rep.verdict = all(rep.flags.values())
    return rep


# --- table export ----------------------------------------------------------------------


def _r3(v) -> str:
    return f"{float(v):.3f}"


def table1_row(label, a_err, b_err) -> list[str]:
    a = np.asarray(a_err)
    return [str(label), *(_r3(v) for v in a.ravel()), *(_r3(v) for v in np.asarray(b_err))]


def table2_row(label, errs) -> list[str]:
    return [str(label), *(_r3(v) for e in errs for v in e)]


def table3_row(label, sig) -> list[str]:
    return [str(label), *(_r3(v) for _, s in sig for v in s)]


TABLE_HEADERS = {
    1: ["circuit", "a11", "a12", "a21", "a22", "b1", "b2"],
    2: ["circuit", "xA_0.36", "xB_0.36", "xA_0.6", "xB_0.6"],
    3: ["circuit", "xA/u_0.3", "xB/u_0.3", "xA/u_0.4", "xB/u_0.4", "xA/u_0.5", "xB/u_0.5", "xA/u_0.6", "xB/u_0.6"],
}


def write_table(number: int, rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_HEADERS[number])
        w.writerows(rows)
