"""Kinematic bicycle model with piecewise-constant jerk and curvature rate.

Heading, curvature, speed and acceleration advance in closed form. The
positional increments are integrals of ``cos(theta(t)) v(t)`` and
``sin(theta(t)) v(t)`` over the step, approximated with Gauss-Legendre
quadrature. Everything is vectorised over a leading batch axis so a whole
trajectory can be propagated in one call.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, field

import numpy as np

STATE_FIELDS = ("x", "y", "theta", "kappa", "v", "a")
X, Y, THETA, KAPPA, V, A = range(6)
J, KDOT = 6, 7


class InvalidOrder(ValueError):
    pass


class InvalidSteering(ValueError):
    pass


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    kappa: float = 0.0
    v: float = 0.0
    a: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        return cls(*(float(v) for v in arr))


@dataclass(frozen=True)
class ControlPair:
    j: float = 0.0
    kappa_dot: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.j, self.kappa_dot], dtype=float)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    order: int
    nodes: np.ndarray
    weights: np.ndarray


def legendre_rule(order: int = 10) -> QuadratureRule:
    """Gauss-Legendre nodes and weights on [-1, 1], exact up to degree 2N-1."""
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= 32:
        raise InvalidOrder(f"quadrature order must be an integer in [1, 32], got {order!r}")
    nodes, weights = np.polynomial.legendre.leggauss(int(order))
    # symmetrise to remove round-off asymmetry of the eigen-solver
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    return QuadratureRule(int(order), nodes, weights)


DEFAULT_RULE = legendre_rule(10)


def steering_to_curvature(alpha: float, l_axis: float) -> float:
    """Curvature of the turning circle for steering angle ``alpha``."""
    if not abs(alpha) < math.pi / 2:
        raise InvalidSteering(f"|alpha| must be below pi/2, got {alpha}")
    if l_axis <= 0:
        raise InvalidSteering(f"axis length must be positive, got {l_axis}")
    return math.tan(alpha) / l_axis


@dataclass(frozen=True)
class VehicleGeometry:
    """Footprint parameters; circles sit at the rear and front axle midpoints.

    The state reference point is the rear axle midpoint, so the default
    circle offsets are ``(0, axis_length)``.
    """

    length: float = 4.8
    width: float = 1.9
    axis_length: float = 2.8
    circle_radius: float | None = None
    circle_centers: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.circle_radius is None:
            object.__setattr__(self, "circle_radius",
                               math.hypot(self.width / 2, self.length / 4))
        if self.circle_centers is None:
            object.__setattr__(self, "circle_centers", (0.0, self.axis_length))
        object.__setattr__(self, "circle_centers", tuple(float(c) for c in self.circle_centers))
        if not (self.length > 0 and self.width > 0):
            raise ValueError("vehicle length and width must be positive")
        if not 0 < self.axis_length < self.length:
            raise ValueError("axis_length must lie in (0, length)")
        if self.circle_radius < self.width / 2:
            raise ValueError("circle_radius must be at least width / 2")


@dataclass(frozen=True)
class KinematicBounds:
    """Kinematic limits. Curvature limits derive from the steering limits.

    ``kappa_dot_max`` uses ``alpha_rate_max / axis_length``, the small-angle
    form of d(tan(alpha)/L)/dt.
    """

    a_min: float = -4.0
    a_max: float = 2.0
    j_min: float = -4.0
    j_max: float = 4.0
    a_centri_max: float = 3.0
    j_centri_max: float = 4.0
    theta_diff_max: float = math.pi / 2
    alpha_max: float = 0.55
    alpha_rate_max: float = 0.4
    axis_length: float = 2.8
    kappa_max: float = field(init=False)
    kappa_dot_max: float = field(init=False)

    def __post_init__(self):
        if not (self.a_min < self.a_max and self.j_min < self.j_max):
            raise ValueError("bounds need min < max for acceleration and jerk")
        for name in ("a_centri_max", "j_centri_max", "theta_diff_max",
                     "alpha_max", "alpha_rate_max", "axis_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        object.__setattr__(self, "kappa_max",
                           steering_to_curvature(self.alpha_max, self.axis_length))
        object.__setattr__(self, "kappa_dot_max", self.alpha_rate_max / self.axis_length)


# -- propagation --------------------------------------------------------------


def _sample_times(dt: float, rule: QuadratureRule):
    t = 0.5 * dt * (rule.nodes + 1.0)
    w = 0.5 * dt * rule.weights
    return t, w


def _heading_poly(s0: np.ndarray, u: np.ndarray, t: np.ndarray) -> np.ndarray:
    """theta(t) for each batch row (rows) at times t (columns)."""
    th, k, v, a = s0[:, THETA, None], s0[:, KAPPA, None], s0[:, V, None], s0[:, A, None]
    j, kd = u[:, 0, None], u[:, 1, None]
    return (th + k * v * t + 0.5 * (k * a + v * kd) * t**2
            + (0.5 * k * j + a * kd) * t**3 / 3.0 + 0.125 * kd * j * t**4)


def propagate_batch(s0: np.ndarray, u: np.ndarray, dt: float,
                    rule: QuadratureRule = DEFAULT_RULE) -> np.ndarray:
    """Propagate states ``s0`` (m, 6) under controls ``u`` (m, 2) for ``dt``."""
    s0 = np.atleast_2d(np.asarray(s0, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    j, kd = u[:, 0], u[:, 1]
    v0, a0 = s0[:, V], s0[:, A]
    t, w = _sample_times(dt, rule)
    theta_t = _heading_poly(s0, u, t)
    speed_t = v0[:, None] + a0[:, None] * t + 0.5 * j[:, None] * t**2
    out = np.empty_like(s0)
    out[:, X] = s0[:, X] + (np.cos(theta_t) * speed_t) @ w
    out[:, Y] = s0[:, Y] + (np.sin(theta_t) * speed_t) @ w
    out[:, THETA] = _heading_poly(s0, u, np.array([dt]))[:, 0]
    out[:, KAPPA] = s0[:, KAPPA] + kd * dt
    out[:, V] = v0 + a0 * dt + 0.5 * j * dt**2
    out[:, A] = a0 + j * dt
    return out


def propagate_jacobian_batch(s0: np.ndarray, u: np.ndarray, dt: float,
                             rule: QuadratureRule = DEFAULT_RULE) -> np.ndarray:
    """d(next state)/d(state, j, kappa_dot) as an (m, 6, 8) array."""
    s0 = np.atleast_2d(np.asarray(s0, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    m = len(s0)
    k0, v0, a0 = s0[:, KAPPA, None], s0[:, V, None], s0[:, A, None]
    j, kd = u[:, 0, None], u[:, 1, None]

    def dtheta(t):
        # columns follow (x, y, theta, kappa, v, a, j, kappa_dot)
        z = np.zeros(np.broadcast_shapes(k0.shape, np.shape(t)))
        return np.stack([
            z, z, z + 1.0,
            v0 * t + 0.5 * a0 * t**2 + j * t**3 / 6.0,
            k0 * t + 0.5 * kd * t**2,
            0.5 * k0 * t**2 + kd * t**3 / 3.0,
            k0 * t**3 / 6.0 + 0.125 * kd * t**4,
            0.5 * v0 * t**2 + a0 * t**3 / 3.0 + 0.125 * j * t**4,
        ], axis=-1)

    t, w = _sample_times(dt, rule)
    theta_t = _heading_poly(s0, u, t)
    speed_t = v0 + a0 * t + 0.5 * j * t**2
    dth = dtheta(t)  # (m, N, 8)
    dspeed = np.zeros_like(dth)
    dspeed[..., V] = 1.0
    dspeed[..., A] = t
    dspeed[..., J] = 0.5 * t**2
    c, s = np.cos(theta_t), np.sin(theta_t)
    jac = np.zeros((m, 6, 8))
    jac[:, X] = np.einsum("n,mnk->mk", w, (-s * speed_t)[..., None] * dth + c[..., None] * dspeed)
    jac[:, Y] = np.einsum("n,mnk->mk", w, (c * speed_t)[..., None] * dth + s[..., None] * dspeed)
    jac[:, X, X] = 1.0
    jac[:, Y, Y] = 1.0
    jac[:, THETA] = dtheta(np.array([dt]))[:, 0, :]
    jac[:, KAPPA, KAPPA] = 1.0
    jac[:, KAPPA, KDOT] = dt
    jac[:, V, V] = 1.0
    jac[:, V, A] = dt
    jac[:, V, J] = 0.5 * dt**2
    jac[:, A, A] = 1.0
    jac[:, A, J] = dt
    return jac


def propagate(s0: VehicleState, u: ControlPair, dt: float,
              rule: QuadratureRule = DEFAULT_RULE) -> VehicleState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return VehicleState.from_array(propagate_batch(s0.as_array(), u.as_array(), dt, rule)[0])


def propagate_jacobian(s0: VehicleState, u: ControlPair, dt: float,
                       rule: QuadratureRule = DEFAULT_RULE) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return propagate_jacobian_batch(s0.as_array(), u.as_array(), dt, rule)[0]


def rollout(s0, controls: np.ndarray, dt: float, rule: QuadratureRule = DEFAULT_RULE) -> np.ndarray:
    """Chain ``propagate`` over a control sequence; returns (len(controls)+1, 6) states."""
    s = np.asarray(s0.as_array() if isinstance(s0, VehicleState) else s0, dtype=float)
    states = [s]
    for u in np.asarray(controls, dtype=float).reshape(-1, 2):
        s = propagate_batch(s, u, dt, rule)[0]
        states.append(s)
    return np.array(states)
