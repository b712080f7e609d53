"""Adaptation and approximate scale invariance (ASI) of step responses.

For a step u0 -> u1 with output y(t)::

    precision    = (|y(inf) - y(0)| / |y(0)|) / delta_u
    sensitivity  = (max_t |y(t) - y(0)| / |y(0)|) / delta_u
    delta_u      = |u1 - u0| / |u0|

A circuit adapts when precision < 0.1 and detects the step when
sensitivity > 1. Two responses to steps related by a common scale factor
are compared through

    relative_difference = max_t |y_high(t) - y_low(t)| / max(y_high(t), y_low(t))

evaluated pointwise in time. The amplitude-normalised variant divides the
largest gap by the larger transient amplitude max_t |y(t) - y(0)| instead.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .integrate import SAMPLES, Trajectory

PRECISION_THRESHOLD = 0.1
SENSITIVITY_THRESHOLD = 1.0
ASI_THRESHOLD = 0.1


class MetricError(ValueError):
    """The experiment does not define the requested metric."""


@dataclass(frozen=True)
class AdaptationMetrics:
    precision_ratio: float
    sensitivity: float
    delta_u: float
    adapts: bool
    detects: bool
    y0: float = np.nan
    y_inf: float = np.nan


@dataclass(frozen=True)
class AsiMetrics:
    relative_difference: float
    asi: bool
    reference_amplitude: float
    max_difference: float = np.nan


def adaptation_metrics(
    traj: Trajectory,
    u0: float,
    u1: float,
    y_inf: float | None = None,
    relative_precision: bool = True,
    precision_threshold: float = PRECISION_THRESHOLD,
    sensitivity_threshold: float = SENSITIVITY_THRESHOLD,
) -> AdaptationMetrics:
    """Precision and sensitivity of a pre-adapted step response.

    Parameters
    ----------
    traj : Trajectory
        Response to the step u0 -> u1, starting at the u0 equilibrium.
    y_inf : float, optional
        Output at the u1 equilibrium. Defaults to the last sample.
    relative_precision : bool
        Divide the steady-state shift by |y(0)| (default). With ``False``
        the absolute shift is used.
    """
    if u0 == 0:
        raise MetricError("u0 = 0: relative input change undefined")
    delta_u = abs(u1 - u0) / abs(u0)
    if delta_u == 0:
        raise MetricError("u0 == u1: no step, precision undefined")
    y = traj.y
    y0 = float(y[0])
    if y0 == 0:
        raise MetricError("y(0) = 0: relative output change undefined")
    y_end = float(y[-1]) if y_inf is None else float(y_inf)
    shift = abs(y_end - y0)
    if relative_precision:
        shift /= abs(y0)
    peak = float(np.max(np.abs(y - y0))) / abs(y0)
    precision = shift / delta_u
    sensitivity = peak / delta_u
    return AdaptationMetrics(
        precision, sensitivity, delta_u,
        bool(precision < precision_threshold), bool(sensitivity > sensitivity_threshold),
        y0, y_end)


def common_grid(*trajs: Trajectory, samples: int = SAMPLES) -> np.ndarray:
    """Uniform grid over the longest of the trajectories' time spans."""
    t_end = max(float(t.times[-1]) for t in trajs)
    return np.linspace(0.0, t_end, samples)


def resample(traj: Trajectory, grid: np.ndarray) -> np.ndarray:
    """Output on ``grid``; past the end of the run the last value is held."""
    return np.interp(grid, traj.times, traj.y)


ASI_MODES = ("pointwise", "amplitude")


def asi_metric(
    traj_low: Trajectory,
    traj_high: Trajectory,
    samples: int = SAMPLES,
    threshold: float = ASI_THRESHOLD,
    mode: str = "pointwise",
) -> AsiMetrics:
    """Relative gap between two responses to scaled steps.

    Both outputs are put on a shared uniform grid. The result does not
    depend on argument order.

    Parameters
    ----------
    mode : {"pointwise", "amplitude"}
        ``"pointwise"`` divides the gap at each instant by the larger output
        at that instant. ``"amplitude"`` divides the largest gap by the larger
        transient amplitude, a much stricter test for small-swing circuits.
    """
    if mode not in ASI_MODES:
        raise ValueError(f"mode must be one of {ASI_MODES}, got {mode!r}")
    grid = common_grid(traj_low, traj_high, samples=samples)
    lo = resample(traj_low, grid)
    hi = resample(traj_high, grid)
    amplitude = float(max(np.max(np.abs(hi - hi[0])), np.max(np.abs(lo - lo[0]))))
    gap = np.abs(hi - lo)
    if mode == "amplitude":
        if amplitude == 0:
            raise MetricError("neither response moves: no transient to compare")
        rel = float(np.max(gap)) / amplitude
    else:
        scale = np.maximum(np.abs(hi), np.abs(lo))
        if np.any(scale == 0):
            raise MetricError("output vanishes: pointwise relative gap undefined")
        rel = float(np.max(gap / scale))
    return AsiMetrics(rel, bool(rel < threshold), amplitude, float(np.max(gap)))


METRIC_COLUMNS = (
    "circuit_id", "sample_idx", "u0", "u1", "precision_ratio", "sensitivity",
    "relative_difference", "adapts", "detects", "asi", "classification",
)


def metrics_row(
    circuit_id,
    sample_idx: int,
    u0: float,
    u1: float,
    adaptation: AdaptationMetrics | None,
    asi: AsiMetrics | None,
    classification: str,
) -> dict:
    row = dict.fromkeys(METRIC_COLUMNS, "")
    row.update(circuit_id=circuit_id, sample_idx=sample_idx, u0=u0, u1=u1, classification=classification)
    if adaptation is not None:
        row.update(
            precision_ratio=adaptation.precision_ratio, sensitivity=adaptation.sensitivity,
            adapts=adaptation.adapts, detects=adaptation.detects)
    if asi is not None:
        row.update(relative_difference=asi.relative_difference, asi=asi.asi)
    return row


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_metrics_csv(path) -> list[dict]:
    """Rows with numeric and boolean columns parsed back."""
    out = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for k, v in raw.items():
                if v in ("True", "False"):
                    row[k] = v == "True"
                elif k in ("u0", "u1", "precision_ratio", "sensitivity", "relative_difference") and v:
                    row[k] = float(v)
                elif k == "sample_idx":
                    row[k] = int(v)
                else:
                    row[k] = v if v != "" else None
            out.append(row)
    return out


def as_dict(m) -> dict:
    return asdict(m)
