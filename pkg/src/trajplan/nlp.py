"""Sparse nonlinear program over discretised vehicle states.

Decision vector layout, for knots ``i = 1 .. n-1`` (the initial state is a
fixed parameter)::

    z[8(i-1) : 8i] = (x_i, y_i, theta_i, kappa_i, v_i, a_i, j_i, kappa_dot_i)

where ``(j_i, kappa_dot_i)`` is the constant control that carries knot
``i-1`` to knot ``i``.

Equality rows (``6(n-1)``), knot-major: ``X_i - propagate(X_{i-1}, u_i)``
for the six state components.

Inequality rows (``g(z) >= 0``), grouped by kind and knot-major inside each
group, with ``m = n - 1``:

=====================  =========  =============================================
rows                   count      residual
=====================  =========  =============================================
``[0, 4m)``            4 / knot   circle margins (rear-left, rear-right,
                                  front-left, front-right)
``[4m, 6m)``           2 / knot   ``a_c_max -+ v^2 kappa``
``[6m, 8m)``           2 / knot   ``j_c_max -+ (2 v a kappa + v^2 kappa_dot)``
``[8m, 10m)``          2 / knot   ``theta_diff_max -+ wrap(theta - ref_heading)``
=====================  =========  =============================================

Projections onto the reference line and the boundaries are recomputed at
every evaluation and treated as fixed when differentiating.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .corridor import DrivableCorridor, collision_margins_many
from .geometry import project_many
from .kinematics import (
    DEFAULT_RULE,
    QuadratureRule,
    propagate_batch,
    propagate_jacobian_batch,
)
from .scenario import ObjectiveWeights, Scenario, wrap_angle

BLOCK = 8
N_STATE = 6
EQ_PER_KNOT = 6
INEQ_PER_KNOT = 10


class LayoutError(ValueError):
    pass


def pack(states, controls) -> np.ndarray:
    """Interleave per-knot states (n-1, 6) and incoming controls (n-1, 2)."""
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if states.ndim != 2 or states.shape[1] != N_STATE or controls.shape != (len(states), 2):
        raise LayoutError(f"need states (m, 6) and controls (m, 2), got {states.shape} and "
                          f"{controls.shape}")
    if len(states) < 1:
        raise LayoutError("need at least one free knot (n >= 2)")
    return np.concatenate([states, controls], axis=1).ravel()


def unpack(z) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or len(z) == 0 or len(z) % BLOCK:
        raise LayoutError(f"decision vector length must be a positive multiple of 8, got {z.shape}")
    blocks = z.reshape(-1, BLOCK)
    return blocks[:, :N_STATE].copy(), blocks[:, N_STATE:].copy()


def huber(x, delta):
    ax = np.abs(x)
    return np.where(ax <= delta, 0.5 * x * x, delta * (ax - 0.5 * delta))


def huber_grad(x, delta):
    return np.clip(x, -delta, delta)


class SparsityPattern(NamedTuple):
    eq_rows: np.ndarray
    eq_cols: np.ndarray
    ineq_rows: np.ndarray
    ineq_cols: np.ndarray
    n_var: int
    n_eq: int
    n_ineq: int

    @property
    def nnz(self) -> int:
        return len(self.eq_rows) + len(self.ineq_rows)


def sparsity(n: int) -> SparsityPattern:
    """Structural nonzeros of the equality and inequality Jacobians for ``n`` knots."""
    if n < 2:
        raise LayoutError("need n >= 2 knots")
    m = n - 1
    k = np.arange(m)
    r6 = np.arange(6)
    # equality blocks: identity on X_i, propagation jacobian on X_{i-1} and u_i
    ident_r = (6 * k[:, None] + r6).ravel()
    ident_c = (8 * k[:, None] + r6).ravel()
    kk = k[1:]
    prev_r = np.broadcast_to(6 * kk[:, None, None] + r6[:, None], (len(kk), 6, 6)).ravel()
    prev_c = np.broadcast_to(8 * (kk[:, None, None] - 1) + r6[None, :], (len(kk), 6, 6)).ravel()
    ctrl_r = np.broadcast_to(6 * k[:, None, None] + r6[:, None], (m, 6, 2)).ravel()
    ctrl_c = np.broadcast_to(8 * k[:, None, None] + 6 + np.arange(2)[None, :], (m, 6, 2)).ravel()
    eq_rows = np.concatenate([ident_r, prev_r, ctrl_r])
    eq_cols = np.concatenate([ident_c, prev_c, ctrl_c])

    def block(row0, per, cols):
        cols = np.asarray(cols)
        r = np.broadcast_to(row0 + per * k[:, None, None] + np.arange(per)[:, None],
                            (m, per, len(cols))).ravel()
        c = np.broadcast_to(8 * k[:, None, None] + cols[None, :], (m, per, len(cols))).ravel()
        return r, c

    coll = block(0, 4, [0, 1, 2])
    cacc = block(4 * m, 2, [3, 4])
    cjerk = block(6 * m, 2, [3, 4, 5, 7])
    head = block(8 * m, 2, [0, 1, 2])
    ineq_rows = np.concatenate([coll[0], cacc[0], cjerk[0], head[0]])
    ineq_cols = np.concatenate([coll[1], cacc[1], cjerk[1], head[1]])
    return SparsityPattern(eq_rows, eq_cols, ineq_rows, ineq_cols,
                           BLOCK * m, EQ_PER_KNOT * m, INEQ_PER_KNOT * m)


class _CsrBuilder:
    """Reuses a CSR structure; only the values change between evaluations."""

    def __init__(self, rows, cols, shape):
        probe = sp.csr_matrix((np.arange(1, len(rows) + 1, dtype=float), (rows, cols)), shape=shape)
        probe.sort_indices()
        self.perm = probe.data.astype(np.int64) - 1
        self.indices = probe.indices
        self.indptr = probe.indptr
        self.shape = shape

    def __call__(self, values):
        return sp.csr_matrix((values[self.perm], self.indices, self.indptr), shape=self.shape)


class ConstraintSet(NamedTuple):
    eq: np.ndarray
    ineq: np.ndarray


@dataclass
class _Eval:
    z: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    prev: np.ndarray
    ref: object
    coll: tuple | None = None


class TrajectoryNlp:
    """Objective, constraints and derivatives for one scenario.

    ``corridor`` is the preprocessed corridor used for projections; it
    defaults to the scenario's own corridor.
    """

    def __init__(self, scenario: Scenario, corridor: DrivableCorridor | None = None,
                 rule: QuadratureRule = DEFAULT_RULE):
        self.scenario = scenario
        self.corridor = corridor if corridor is not None else scenario.corridor
        self.rule = rule
        self.n = scenario.n_knots
        self.m = self.n - 1
        self.n_var = BLOCK * self.m
        self.n_eq = EQ_PER_KNOT * self.m
        self.n_ineq = INEQ_PER_KNOT * self.m
        self.s0 = scenario.s0.as_array()
        self.pattern = sparsity(self.n)
        self._eq_csr = _CsrBuilder(self.pattern.eq_rows, self.pattern.eq_cols,
                                   (self.n_eq, self.n_var))
        self._ineq_csr = _CsrBuilder(self.pattern.ineq_rows, self.pattern.ineq_cols,
                                     (self.n_ineq, self.n_var))
        base = np.arange(self.m)[:, None, None] * BLOCK
        self._blk_rows = np.broadcast_to(base + np.arange(BLOCK)[None, :, None],
                                         (self.m, BLOCK, BLOCK)).ravel()
        self._blk_cols = np.broadcast_to(base + np.arange(BLOCK)[None, None, :],
                                         (self.m, BLOCK, BLOCK)).ravel()
        self._last: _Eval | None = None
        self._hints: dict = {}

    # -- layout -------------------------------------------------------------------

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        b = self.scenario.bounds
        lo = np.array([-np.inf, -np.inf, -np.inf, -b.kappa_max, 0.0, b.a_min, b.j_min,
                       -b.kappa_dot_max])
        hi = np.array([np.inf, np.inf, np.inf, b.kappa_max, np.inf, b.a_max, b.j_max,
                       b.kappa_dot_max])
        return np.tile(lo, self.m), np.tile(hi, self.m)

    def _prepare(self, z) -> _Eval:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n_var,):
            raise LayoutError(f"expected decision vector of length {self.n_var}, got {z.shape}")
        last = self._last
        if last is not None and np.array_equal(last.z, z):
            return last
        blocks = z.reshape(self.m, BLOCK)
        states = blocks[:, :N_STATE]
        controls = blocks[:, N_STATE:]
        prev = np.vstack([self.s0, states[:-1]])
        ref = project_many(self.corridor.reference, self.corridor.reference_index, states[:, :2],
                           self._hints.get("ref"))
        self._hints["ref"] = ref.segment_index
        self._last = _Eval(z.copy(), states, controls, prev, ref)
        return self._last

    def _collision(self, e: _Eval):
        if e.coll is None:
            e.coll = collision_margins_many(self.corridor, e.states, self.scenario.geometry,
                                            with_grad=True, hints=self._hints)
        return e.coll

    # -- objective ----------------------------------------------------------------

    def objective_terms(self, z) -> dict[str, float]:
        e = self._prepare(z)
        w = self.scenario.weights
        x, kap, v, a = e.states[:, 0], e.states[:, 3], e.states[:, 4], e.states[:, 5]
        j, kd = e.controls[:, 0], e.controls[:, 1]
        cacc = v * v * kap
        cjerk = 2.0 * v * a * kap + v * v * kd
        return {
            "centri_acc": w.w_centri_acc * float(np.sum(cacc**2)),
            "centri_jerk": w.w_centri_jerk * float(np.sum(cjerk**2)),
            "kappa_dot": w.w_kdot * float(np.sum(kd**2)),
            "jerk": w.w_jerk * float(np.sum(j**2)),
            "lateral": w.w_lat * float(np.sum(huber(e.ref.signed_offset, w.delta_l))),
            "speed": w.w_v * float(np.sum(huber(v - self.scenario.v_target, w.delta_v))),
        }

    def objective(self, z) -> float:
        return float(sum(self.objective_terms(z).values()))

    def gradient(self, z) -> np.ndarray:
        e = self._prepare(z)
        w = self.scenario.weights
        kap, v, a = e.states[:, 3], e.states[:, 4], e.states[:, 5]
        j, kd = e.controls[:, 0], e.controls[:, 1]
        g = np.zeros((self.m, BLOCK))
        cacc = v * v * kap
        g[:, 3] += w.w_centri_acc * 2.0 * cacc * v * v
        g[:, 4] += w.w_centri_acc * 2.0 * cacc * 2.0 * v * kap
        cjerk = 2.0 * v * a * kap + v * v * kd
        cj = w.w_centri_jerk * 2.0 * cjerk
        g[:, 3] += cj * 2.0 * v * a
        g[:, 4] += cj * (2.0 * a * kap + 2.0 * v * kd)
        g[:, 5] += cj * 2.0 * v * kap
        g[:, 7] += cj * v * v
        g[:, 7] += w.w_kdot * 2.0 * kd
        g[:, 6] += w.w_jerk * 2.0 * j
        g[:, :2] += (w.w_lat * huber_grad(e.ref.signed_offset, w.delta_l))[:, None] * e.ref.normal
        g[:, 4] += w.w_v * huber_grad(v - self.scenario.v_target, w.delta_v)
        return g.ravel()

    def objective_curvature(self, z) -> sp.csr_matrix:
        """Gauss-Newton model of the objective Hessian (block diagonal, PSD)."""
        e = self._prepare(z)
        w = self.scenario.weights
        kap, v, a = e.states[:, 3], e.states[:, 4], e.states[:, 5]
        kd = e.controls[:, 1]
        r_acc = np.zeros((self.m, BLOCK))
        r_acc[:, 3], r_acc[:, 4] = v * v, 2.0 * v * kap
        r_jerk = np.zeros((self.m, BLOCK))
        r_jerk[:, 3] = 2.0 * v * a
        r_jerk[:, 4] = 2.0 * a * kap + 2.0 * v * kd
        r_jerk[:, 5] = 2.0 * v * kap
        r_jerk[:, 7] = v * v
        h = 2.0 * w.w_centri_acc * np.einsum("mi,mj->mij", r_acc, r_acc)
        h += 2.0 * w.w_centri_jerk * np.einsum("mi,mj->mij", r_jerk, r_jerk)
        h[:, 7, 7] += 2.0 * w.w_kdot
        h[:, 6, 6] += 2.0 * w.w_jerk
        inside = w.w_lat * (np.abs(e.ref.signed_offset) <= w.delta_l)
        nrm = e.ref.normal
        h[:, :2, :2] += inside[:, None, None] * np.einsum("mi,mj->mij", nrm, nrm)
        # foot on a vertex: the offset is a point distance, curved along the tangent
        d = e.ref.signed_offset
        at_vertex = ((e.ref.t <= 0.0) | (e.ref.t >= 1.0)) & (d != 0.0)
        bend = np.zeros_like(d)
        bend[at_vertex] = w.w_lat * huber_grad(d[at_vertex], w.delta_l) / d[at_vertex]
        h[:, :2, :2] += bend[:, None, None] * (np.eye(2) - np.einsum("mi,mj->mij", nrm, nrm))
        h[:, 4, 4] += w.w_v * (np.abs(v - self.scenario.v_target) <= w.delta_v)
        return sp.csr_matrix((h.ravel(), (self._blk_rows, self._blk_cols)),
                             shape=(self.n_var, self.n_var))

    # -- constraints --------------------------------------------------------------

    def eq_constraints(self, z) -> np.ndarray:
        e = self._prepare(z)
        return (e.states - propagate_batch(e.prev, e.controls, self.scenario.dt, self.rule)).ravel()

    def ineq_constraints(self, z) -> np.ndarray:
        e = self._prepare(z)
        b = self.scenario.bounds
        kap, v, a = e.states[:, 3], e.states[:, 4], e.states[:, 5]
        kd = e.controls[:, 1]
        coll = self._collision(e)[0]
        cacc = v * v * kap
        cjerk = 2.0 * v * a * kap + v * v * kd
        hdiff = wrap_angle(e.states[:, 2] - e.ref.heading)
        return np.concatenate([
            coll.ravel(),
            np.column_stack([b.a_centri_max - cacc, b.a_centri_max + cacc]).ravel(),
            np.column_stack([b.j_centri_max - cjerk, b.j_centri_max + cjerk]).ravel(),
            np.column_stack([b.theta_diff_max - hdiff, b.theta_diff_max + hdiff]).ravel(),
        ])

    def constraints(self, z) -> ConstraintSet:
        return ConstraintSet(self.eq_constraints(z), self.ineq_constraints(z))

    def eq_jacobian(self, z) -> sp.csr_matrix:
        e = self._prepare(z)
        jac = propagate_jacobian_batch(e.prev, e.controls, self.scenario.dt, self.rule)
        vals = np.concatenate([
            np.ones(6 * self.m),
            -jac[1:, :, :6].ravel(),
            -jac[:, :, 6:].ravel(),
        ])
        return self._eq_csr(vals)

    def ineq_jacobian(self, z) -> sp.csr_matrix:
        e = self._prepare(z)
        kap, v, a = e.states[:, 3], e.states[:, 4], e.states[:, 5]
        kd = e.controls[:, 1]
        coll_grad = self._collision(e)[1]
        dcacc = np.column_stack([v * v, 2.0 * v * kap])  # wrt (kappa, v)
        dcjerk = np.column_stack([2.0 * v * a, 2.0 * a * kap + 2.0 * v * kd, 2.0 * v * kap, v * v])
        sign = np.array([-1.0, 1.0])[None, :, None]
        dhead = np.zeros((self.m, 3))
        dhead[:, 2] = 1.0
        vals = np.concatenate([
            coll_grad.ravel(),
            (sign * dcacc[:, None, :]).ravel(),
            (sign * dcjerk[:, None, :]).ravel(),
            (sign * dhead[:, None, :]).ravel(),
        ])
        return self._ineq_csr(vals)

    def problem(self):
        from .solver import NlpProblem

        lo, hi = self.bounds()
        return NlpProblem(
            n=self.n_var,
            objective=self.objective,
            gradient=self.gradient,
            eq=self.eq_constraints,
            eq_jacobian=self.eq_jacobian,
            ineq=self.ineq_constraints,
            ineq_jacobian=self.ineq_jacobian,
            lower=lo,
            upper=hi,
            n_eq=self.n_eq,
            n_ineq=self.n_ineq,
            sparsity=self.pattern,
            curvature=self.objective_curvature,
            describe_eq=self.describe_eq_row,
            describe_ineq=self.describe_ineq_row,
        )

    # -- diagnostics --------------------------------------------------------------

    def describe_eq_row(self, row: int) -> str:
        names = ("x", "y", "theta", "kappa", "v", "a")
        return f"continuity[{names[row % 6]}] between knots {row // 6} and {row // 6 + 1}"

    def describe_ineq_row(self, row: int) -> str:
        m = self.m
        if row < 4 * m:
            which = ("rear/left", "rear/right", "front/left", "front/right")[row % 4]
            return f"collision margin {which} at knot {row // 4 + 1}"
        kinds = ("centripetal acceleration", "centripetal jerk", "heading difference")
        kind, rem = divmod(row - 4 * m, 2 * m)
        return f"{kinds[kind]} ({'upper' if rem % 2 == 0 else 'lower'}) at knot {rem // 2 + 1}"


# module-level conveniences mirroring the evaluator methods

def eval_objective(z, scenario: Scenario, weights: ObjectiveWeights | None = None,
                   corridor: DrivableCorridor | None = None) -> float:
    return _nlp_for(scenario, weights, corridor).objective(z)


def eval_objective_gradient(z, scenario: Scenario, weights: ObjectiveWeights | None = None,
                            corridor: DrivableCorridor | None = None) -> np.ndarray:
    return _nlp_for(scenario, weights, corridor).gradient(z)


def eval_constraints(z, scenario: Scenario, corridor: DrivableCorridor | None = None) -> ConstraintSet:
    return _nlp_for(scenario, None, corridor).constraints(z)


def _nlp_for(scenario, weights, corridor):
    if weights is not None and weights != scenario.weights:
        from dataclasses import replace

        scenario = replace(scenario, weights=weights)
    return TrajectoryNlp(scenario, corridor)
