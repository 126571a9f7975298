"""End-to-end planning: corridor preparation, initial guess, solve, validation."""

from __future__ import annotations

import functools
import hashlib
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from matplotlib.path import Path as _PolygonPath

from .config import GuessGains, PlannerConfig
from .corridor import DrivableCorridor, SmoothingParams, circle_centers, prepare_corridor
from .geometry import project_many
from .kinematics import A, KAPPA, THETA, V, X, Y, propagate_batch, rollout
from .nlp import TrajectoryNlp, pack
from .scenario import Scenario, wrap_angle
from .solver import SolveResult, Status, WarmStart, solve

log = logging.getLogger(__name__)


@dataclass
class Trajectory:
    """Knot states (including the start) and the controls of each segment.

    ``controls[i]`` acts on the segment ending at knot ``i + 1``.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    feasible: bool = True

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 6)
        self.controls = np.asarray(self.controls, dtype=float).reshape(-1, 2)
        if len(self.states) != len(self.times) or len(self.controls) != len(self.states) - 1:
            raise ValueError("trajectory needs n times, n states and n - 1 controls")

    @property
    def n_knots(self) -> int:
        return len(self.states)

    @classmethod
    def from_vector(cls, z, scenario: Scenario, feasible: bool = True) -> "Trajectory":
        blocks = np.asarray(z, dtype=float).reshape(-1, 8)
        states = np.vstack([scenario.s0.as_array(), blocks[:, :6]])
        return cls(scenario.dt * np.arange(len(states)), states, blocks[:, 6:].copy(), feasible)

    def to_vector(self) -> np.ndarray:
        return pack(self.states[1:], self.controls)

    def knot_controls(self) -> np.ndarray:
        """Controls per knot: the incoming segment's, and the first segment's at knot 0."""
        return np.vstack([self.controls[:1], self.controls])

    def centripetal(self) -> tuple[np.ndarray, np.ndarray]:
        """(v^2 kappa, 2 v a kappa + v^2 kappa_dot) per knot."""
        s = self.states
        kd = self.knot_controls()[:, 1]
        acc = s[:, V] ** 2 * s[:, KAPPA]
        jerk = 2.0 * s[:, V] * s[:, A] * s[:, KAPPA] + s[:, V] ** 2 * kd
        return acc, jerk


@dataclass
class ValidationReport:
    continuity_max: np.ndarray
    continuity_failures: list
    limit_violations: dict
    min_margin: np.ndarray
    collision_failures: list
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tol,
            "continuity_max": dict(zip(("x", "y", "theta", "kappa", "v", "a"),
                                       map(float, self.continuity_max))),
            "continuity_failures": list(map(int, self.continuity_failures)),
            "limit_violations": {k: list(map(int, v)) for k, v in self.limit_violations.items()},
            "min_collision_margin": float(np.min(self.min_margin)),
            "collision_failures": list(map(int, self.collision_failures)),
            "per_knot_min_margin": [float(m) for m in self.min_margin],
        }


# -- initial guess ----------------------------------------------------------------


def initial_guess(scenario: Scenario, gains: GuessGains = GuessGains()) -> Trajectory:
    """Roll out a proportional speed and lateral controller from the start state.

    Continuity holds by construction; collisions are not avoided.
    """
    b = scenario.bounds
    dt = scenario.dt
    ref = scenario.corridor.reference
    index = scenario.corridor.reference_index
    s = scenario.s0.as_array()
    states, controls = [s], []
    for _ in range(scenario.n_knots - 1):
        a_cmd = np.clip(gains.k_v * (scenario.v_target - s[V]), b.a_min, b.a_max)
        jerk = np.clip((a_cmd - s[A]) / dt, b.j_min, b.j_max)
        proj = project_many(ref, index, s[None, :2])
        e_lat = proj.signed_offset[0]
        e_head = float(wrap_angle(s[THETA] - proj.heading[0]))
        k_cmd = np.clip(-gains.k_d * e_lat - gains.k_theta * e_head, -b.kappa_max, b.kappa_max)
        kdot = np.clip((k_cmd - s[KAPPA]) / dt, -b.kappa_dot_max, b.kappa_dot_max)
        u = np.array([jerk, kdot])
        s = propagate_batch(s, u, dt)[0]
        states.append(s)
        controls.append(u)
    return Trajectory(dt * np.arange(len(states)), np.array(states), np.array(controls))


# -- warm start ---------------------------------------------------------------------


def fingerprint(scenario: Scenario) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(scenario.corridor.reference.points).tobytes())
    h.update(f"{scenario.n_knots}|{scenario.dt!r}".encode())
    return h.hexdigest()


def _shift_rows(arr: np.ndarray, k: int, fill: np.ndarray | None = None) -> np.ndarray:
    if k == 0:
        return arr.copy()
    out = np.empty_like(arr)
    out[:-k] = arr[k:]
    out[-k:] = arr[-1] if fill is None else fill
    return out


@dataclass
class WarmStartCache:
    """Previous solution of a replanning loop, reused when the problem is the same road."""

    fingerprint: str | None = None
    trajectory: Trajectory | None = None
    warm: WarmStart | None = None
    timestamp: float | None = None

    def clear(self) -> None:
        self.fingerprint = self.trajectory = self.warm = self.timestamp = None

    def store(self, scenario: Scenario, result: SolveResult, trajectory: Trajectory) -> None:
        self.fingerprint = fingerprint(scenario)
        self.trajectory = trajectory
        self.warm = result.warm_start()
        self.timestamp = time.time()

    def lookup(self, scenario: Scenario) -> WarmStart | None:
        """Previous solution shifted so its knot nearest the new start becomes knot 0."""
        if self.warm is None or self.fingerprint != fingerprint(scenario):
            return None
        prev = self.trajectory
        s0 = scenario.s0.as_array()
        k = int(np.argmin(np.hypot(*(prev.states[:, :2] - s0[:2]).T)))
        m = prev.n_knots - 1
        k = min(k, m)
        blocks = self.warm.primal.reshape(m, 8)
        if k:
            tail = rollout(prev.states[-1], np.zeros((k, 2)), scenario.dt)[1:]
            blocks = np.vstack([blocks[k:], np.column_stack([tail, np.zeros((k, 2))])])
        eq = _shift_rows(self.warm.eq_multipliers.reshape(m, 6), k)
        ineq = self.warm.ineq_multipliers
        parts = [ineq[: 4 * m].reshape(m, 4)] + [ineq[4 * m + 2 * m * i: 4 * m + 2 * m * (i + 1)]
                                                 .reshape(m, 2) for i in range(3)]
        parts = [_shift_rows(p, k, np.zeros(p.shape[1])) for p in parts]
        return WarmStart(blocks.ravel(), eq.ravel(), np.concatenate([p.ravel() for p in parts]),
                         self.warm.penalty)


# -- planning -------------------------------------------------------------------------


def _moved(z: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Decision vector with every knot position shifted by ``offset``."""
    blocks = np.array(z, dtype=float).reshape(-1, 8)
    blocks[:, :2] += offset
    return blocks.ravel()


@functools.lru_cache(maxsize=16)
def _prepared(corridor: DrivableCorridor, params: SmoothingParams, smooth: bool):
    return prepare_corridor(corridor, params, smooth)


@dataclass
class PlanOutcome:
    trajectory: Trajectory
    result: SolveResult
    report: ValidationReport
    guess: Trajectory
    corridor: DrivableCorridor
    warm_started: bool = False
    extras: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.trajectory, self.result, self.report))

    @property
    def ok(self) -> bool:
        return self.result.status is Status.OPTIMAL and self.report.passed


def plan(scenario: Scenario, cache: WarmStartCache | None = None, smooth: bool = True,
         config: PlannerConfig | None = None, sink=None, options=None) -> PlanOutcome:
    """Plan one trajectory; on failure the best iterate is returned flagged infeasible."""
    cfg = config or PlannerConfig()
    scenario.check()
    corridor = _prepared(scenario.corridor, cfg.smoothing, smooth)
    # Solve with the start at the origin. Far from it, roundoff in the continuity
    # residuals grows with |x| and large penalties lift it above the tolerances.
    origin = np.array([scenario.s0.x, scenario.s0.y])
    local = replace(scenario, s0=replace(scenario.s0, x=0.0, y=0.0),
                    corridor=corridor.translated(-origin))
    nlp = TrajectoryNlp(local, local.corridor)
    guess = initial_guess(scenario, cfg.gains)
    warm = cache.lookup(scenario) if cache is not None else None
    if warm is not None:
        warm = replace(warm, primal=_moved(warm.primal, -origin))
    result = solve(nlp.problem(), _moved(guess.to_vector(), -origin), warm,
                   options or cfg.solve, sink)
    result = replace(result, primal=_moved(result.primal, origin))
    report = validate(Trajectory.from_vector(result.primal, scenario), scenario, cfg.validation_tol)
    ok = result.status is Status.OPTIMAL and report.passed
    trajectory = Trajectory.from_vector(result.primal, scenario, feasible=ok)
    if not ok:
        log.warning("planning failed for %s: status %s, validation %s; %s",
                    scenario.name or "scenario", result.status.value,
                    "passed" if report.passed else "failed", result.message)
    elif cache is not None:
        cache.store(scenario, result, trajectory)
    return PlanOutcome(trajectory, result, report, guess, corridor, warm is not None)


# -- independent validation --------------------------------------------------------------


def _nearest_on_polyline(points: np.ndarray, vertices: np.ndarray):
    """Brute-force distance and segment index of the nearest point, for every query."""
    a, b = vertices[:-1], vertices[1:]
    ab = b - a
    rel = points[:, None, :] - a[None]
    t = np.clip(np.einsum("qsk,sk->qs", rel, ab) / np.einsum("sk,sk->s", ab, ab), 0.0, 1.0)
    diff = rel - t[..., None] * ab[None]
    d2 = np.einsum("qsk,qsk->qs", diff, diff)
    seg = np.argmin(d2, axis=1)
    return np.sqrt(d2[np.arange(len(points)), seg]), seg


def _corridor_margins(points: np.ndarray, corridor: DrivableCorridor, radius: float):
    left, right = corridor.left.points, corridor.right.points
    polygon = _PolygonPath(np.vstack([left, right[::-1], left[:1]]), closed=True)
    inside = polygon.contains_points(points, radius=0.0)
    dist = np.minimum(_nearest_on_polyline(points, left)[0], _nearest_on_polyline(points, right)[0])
    return np.where(inside, dist, -dist) - radius


def validate(trajectory: Trajectory, scenario: Scenario, tol: float = 1e-6) -> ValidationReport:
    """Re-check a trajectory from scratch against the dynamics, limits and raw corridor.

    Continuity is re-propagated segment by segment. After a failing knot the
    propagation continues from the predicted state, so a single corrupted
    knot is reported once.
    """
    n = scenario.n_knots
    if trajectory.n_knots != n:
        raise ValueError(f"trajectory has {trajectory.n_knots} knots, scenario expects {n}")
    b = scenario.bounds
    states, controls = trajectory.states, trajectory.controls

    residual_max = np.zeros(6)
    continuity_failures = []
    prev = states[0]
    for i in range(1, n):
        pred = propagate_batch(prev, controls[i - 1], scenario.dt)[0]
        err = np.abs(states[i] - pred)
        err[THETA] = abs(float(wrap_angle(states[i, THETA] - pred[THETA])))
        residual_max = np.maximum(residual_max, err)
        if np.any(err > tol):
            continuity_failures.append(i)
            prev = pred
        else:
            prev = states[i]

    knots = np.arange(1, n)
    s = states[1:]
    acc, jerk = trajectory.centripetal()
    ref = scenario.corridor.reference
    _, seg = _nearest_on_polyline(s[:, :2], ref.points)
    head_diff = wrap_angle(s[:, THETA] - ref.headings[seg])
    checks = {
        "kappa": np.abs(s[:, KAPPA]) - b.kappa_max,
        "v": -s[:, V],
        "a": np.maximum(b.a_min - s[:, A], s[:, A] - b.a_max),
        "j": np.maximum(b.j_min - controls[:, 0], controls[:, 0] - b.j_max),
        "kappa_dot": np.abs(controls[:, 1]) - b.kappa_dot_max,
        "centripetal_acc": np.abs(acc[1:]) - b.a_centri_max,
        "centripetal_jerk": np.abs(jerk[1:]) - b.j_centri_max,
        "heading_diff": np.abs(head_diff) - b.theta_diff_max,
    }
    violations = {name: knots[excess > tol].tolist() for name, excess in checks.items()}
    violations = {k: v for k, v in violations.items() if v}

    centers = circle_centers(states, scenario.geometry)
    nc = centers.shape[1]
    margins = _corridor_margins(centers.reshape(-1, 2), scenario.corridor,
                                scenario.geometry.circle_radius).reshape(n, nc)
    min_margin = margins.min(axis=1)
    collision_failures = np.flatnonzero(min_margin < -tol).tolist()

    passed = not continuity_failures and not violations and not collision_failures
    return ValidationReport(residual_max, continuity_failures, violations, min_margin,
                            collision_failures, tol, passed)
