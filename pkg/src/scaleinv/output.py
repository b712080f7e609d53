"""Result persistence: run manifests, JSON reports and plot data."""

from __future__ import annotations

import csv
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .integrate import Trajectory
from .metrics import common_grid, resample

PLOT_COLUMNS = ("t", "y_ref", "y_scaled", "ratio_AB_ref", "ratio_AB_scaled")


def versions() -> dict:
    import numba
    import scipy

    return {
        "scaleinv": __version__, "python": platform.python_version(), "numpy": np.__version__,
        "scipy": scipy.__version__, "numba": numba.__version__,
    }


def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def write_manifest(out, argv, config: dict) -> Path:
    """Write ``<out>.manifest.json`` holding the command, configuration and versions."""
    path = manifest_path(out)
    path.write_text(json.dumps(
        {"argv": list(argv), "config": config, "versions": versions(), "output": str(out)},
        indent=1, sort_keys=True))
    return path


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def emit_plot_data(pairs, path, samples: int | None = None, ab=(0, 1)) -> None:
    """CSV of overlaid responses for external plotting.

    Each pair (reference, scaled) is resampled onto a shared uniform grid
    and appended with its own time axis. ``ab`` gives the state indices
    whose ratio is reported alongside the outputs.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PLOT_COLUMNS)
        for ref, scaled in pairs:
            kw = {} if samples is None else {"samples": samples}
            grid = common_grid(ref, scaled, **kw)
            cols = [grid, resample(ref, grid), resample(scaled, grid),
                    _ratio(ref, grid, ab), _ratio(scaled, grid, ab)]
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])


def _ratio(traj: Trajectory, grid, ab) -> np.ndarray:
    a = np.interp(grid, traj.times, traj.states[:, ab[0]])
    b = np.interp(grid, traj.times, traj.states[:, ab[1]])
    with np.errstate(divide="ignore", invalid="ignore"):
        return a / b


def read_plot_data(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != PLOT_COLUMNS:
        raise ValueError(f"unexpected header {rows[0]}")
    data = np.array(rows[1:], dtype=float).reshape(-1, len(PLOT_COLUMNS))
    return {name: data[:, i] for i, name in enumerate(PLOT_COLUMNS)}


def stdout_or(path):
    """A writable text handle on ``path``, or stdout when path is None or '-'."""
    if path in (None, "-"):
        return _Unclosing(sys.stdout)
    return open(path, "w", newline="")


class _Unclosing:
    def __init__(self, fh):
        self.fh = fh

    def __enter__(self):
        return self.fh

    def __exit__(self, *exc):
        self.fh.flush()
