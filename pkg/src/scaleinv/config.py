"""Run configuration with environment overrides.

Tolerance knobs can be overridden without touching the command line::

    SCALEINV_RTOL, SCALEINV_ATOL, SCALEINV_STEADY_STATE_TOL, SCALEINV_QSS_TOL,
    SCALEINV_MAX_STEPS, SCALEINV_WORKERS, SCALEINV_SEED
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace

from .integrate import ATOL, RTOL, STEADY_STATE_TOL
from .ulfo import P_SCALE, QSS_TOL, U_GRID, U_REF, Thresholds

ENV_PREFIX = "SCALEINV_"
SCREEN_MAX_STEPS = 50_000


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    u_low: float = 0.3
    u_high: float = 0.6
    step_fraction: float = 0.2
    rtol: float = RTOL
    atol: float = ATOL
    steady_state_tol: float = STEADY_STATE_TOL
    qss_tol: float = QSS_TOL
    max_steps: int = SCREEN_MAX_STEPS
    constitutive_fraction: float = 0.5
    asi_mode: str = "pointwise"
    relative_precision: bool = True
    u_grid: tuple[float, ...] = U_GRID
    u_ref: float = U_REF
    p: float = P_SCALE
    thresholds: Thresholds = field(default_factory=Thresholds)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.u_low < self.u_high:
            raise ConfigError(f"need 0 < u_low < u_high, got ({self.u_low}, {self.u_high})")
        if self.step_fraction <= 0:
            raise ConfigError("step fraction must be positive")
        for name in ("rtol", "atol", "steady_state_tol", "qss_tol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_steps < 1 or self.workers < 1:
            raise ConfigError("max_steps and workers must be positive")
        if not 0 < self.constitutive_fraction <= 1:
            raise ConfigError("constitutive fraction must lie in (0, 1]")
        if self.asi_mode not in ("pointwise", "amplitude"):
            raise ConfigError(f"unknown ASI mode {self.asi_mode!r}")

    @property
    def low_step(self) -> tuple[float, float]:
        """Step starting at the bottom of the input range."""
        return self.u_low, self.u_low * (1 + self.step_fraction)

    @property
    def high_step(self) -> tuple[float, float]:
        """Step ending at the top of the input range; also the adaptation test."""
        return self.u_high / (1 + self.step_fraction), self.u_high

    def to_dict(self) -> dict:
        d = asdict(self)
        d["u_grid"] = list(self.u_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if "thresholds" in d:
            d["thresholds"] = Thresholds(**d["thresholds"])
        if "u_grid" in d:
            d["u_grid"] = tuple(d["u_grid"])
        return cls(**d)

    def with_env(self, environ=None) -> "RunConfig":
        """Copy with ``SCALEINV_<FIELD>`` variables applied."""
        environ = os.environ if environ is None else environ
        changes = {}
        for f in fields(self):
            key = ENV_PREFIX + f.name.upper()
            if key in environ and f.name in _ENV_TYPES:
                try:
                    changes[f.name] = _ENV_TYPES[f.name](environ[key])
                except ValueError as exc:
                    raise ConfigError(f"{key}={environ[key]!r}: {exc}") from exc
        return replace(self, **changes)


_ENV_TYPES = {
    "rtol": float, "atol": float, "steady_state_tol": float, "qss_tol": float,
    "max_steps": int, "workers": int, "seed": int,
}
