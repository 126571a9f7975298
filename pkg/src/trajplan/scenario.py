"""Planning problem inputs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .corridor import DrivableCorridor, collision_margins
from .kinematics import KinematicBounds, VehicleGeometry, VehicleState


class InvalidScenario(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveWeights:
    w_centri_acc: float = 1.0
    w_centri_jerk: float = 0.5
    w_kdot: float = 100.0
    w_jerk: float = 1.0
    w_lat: float = 5.0
    w_v: float = 0.2
    delta_l: float = 1.0
    delta_v: float = 2.0

    def __post_init__(self):
        for name in ("w_centri_acc", "w_centri_jerk", "w_kdot", "w_jerk", "w_lat", "w_v"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be nonnegative")
        if self.delta_l <= 0 or self.delta_v <= 0:
            raise ValueError("Huber thresholds must be positive")


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True, eq=False)
class Scenario:
    s0: VehicleState
    corridor: DrivableCorridor
    v_target: float
    t_max: float
    dt: float = 0.1
    geometry: VehicleGeometry = field(default_factory=VehicleGeometry)
    bounds: KinematicBounds = field(default_factory=KinematicBounds)
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    name: str = ""

    def __post_init__(self):
        if self.dt <= 0 or self.t_max <= 0:
            raise InvalidScenario("dt and t_max must be positive")
        steps = self.t_max / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise InvalidScenario(f"t_max / dt must be integral, got {steps}")
        if self.v_target < 0:
            raise InvalidScenario("v_target must be nonnegative")
        if not np.all(np.isfinite(self.s0.as_array())):
            raise InvalidScenario("initial state must be finite")

    @property
    def n_knots(self) -> int:
        return int(round(self.t_max / self.dt)) + 1

    def check(self) -> None:
        """Full invariant check, including corridor geometry and the initial pose."""
        self.corridor.check()
        margins = collision_margins(self.corridor, self.s0, self.geometry)
        if np.any(margins < 0):
            raise InvalidScenario(
                f"initial state collides with the corridor (margins {np.round(margins, 3).tolist()})")

    def with_start(self, s0: VehicleState) -> "Scenario":
        return replace(self, s0=s0)


def normalize_heading(s0: VehicleState) -> VehicleState:
    return replace(s0, theta=float(wrap_angle(s0.theta)))


def horizon_knots(t_max: float, dt: float) -> int:
    return int(math.floor(t_max / dt + 0.5)) + 1
