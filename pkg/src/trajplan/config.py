"""Tunable defaults, optionally overridden by a YAML file named in ``TRAJPLAN_CONFIG``."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .corridor import SmoothingParams
from .scenario import ObjectiveWeights
from .solver import SolveOptions

ENV_VAR = "TRAJPLAN_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GuessGains:
    """Proportional gains of the controller that rolls out the initial guess."""

    k_v: float = 0.6      # 1/s
    k_d: float = 0.15     # 1/m^2
    k_theta: float = 0.6  # 1/(m rad)


@dataclass(frozen=True)
class BenchmarkSettings:
    # inner-iteration budget standing in for a wall-clock cutoff; see README
    cutoff_iterations: int = 300
    shift_knots: int = 1


@dataclass(frozen=True)
class PlannerConfig:
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    gains: GuessGains = field(default_factory=GuessGains)
    smoothing: SmoothingParams = field(default_factory=SmoothingParams)
    # the solver's own default cutoff is 50 ms; a pure-Python backend needs a host-scaled budget
    solve: SolveOptions = field(default_factory=lambda: SolveOptions(cutoff_ms=2000.0))
    validation_tol: float = 1e-6
    benchmark: BenchmarkSettings = field(default_factory=BenchmarkSettings)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "weights": ObjectiveWeights,
    "gains": GuessGains,
    "smoothing": SmoothingParams,
    "solve": SolveOptions,
    "benchmark": BenchmarkSettings,
}


def _apply(section: str, base, overrides) -> object:
    if not isinstance(overrides, dict):
        raise ConfigError(f"config section '{section}' must be a mapping")
    known = {f.name for f in fields(base)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in config section '{section}': {', '.join(unknown)}")
    try:
        return replace(base, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section '{section}': {exc}") from None


def config_from_dict(data: dict | None, base: PlannerConfig | None = None) -> PlannerConfig:
    cfg = base or PlannerConfig()
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping")
    updates = {}
    for key, value in data.items():
        if key in _SECTIONS:
            updates[key] = _apply(key, getattr(cfg, key), value)
        elif key == "validation_tol":
            updates[key] = float(value)
        else:
            raise ConfigError(f"unknown config section '{key}'")
    return replace(cfg, **updates)


def load_config(path: str | os.PathLike | None = None) -> PlannerConfig:
    """Defaults, overridden by ``path`` or else by the file named in ``TRAJPLAN_CONFIG``."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return PlannerConfig()
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
    return config_from_dict(data)
