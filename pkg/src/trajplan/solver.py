"""Augmented-Lagrangian solver for smooth, sparse, bound-constrained NLPs.

Problem form::

    minimise f(z)  subject to  c(z) = 0,  g(z) >= 0,  lower <= z <= upper

The outer loop is the Powell-Hestenes-Rockafellar method of multipliers.
Each subproblem ``min L_A(z)`` over the box is solved by a projected
Newton-type iteration (Bertsekas) whose model uses first derivatives only:

* ``rho * J^T J`` for the equalities and the currently active inequalities,
* the problem's optional ``curvature(z)``, a positive semidefinite model of
  the objective Hessian alone (Gauss-Newton, say),
* for small problems a damped BFGS correction for everything else.

Banded models are factorised with a banded Cholesky; other sparsity falls
back to sparse LU.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cho_solve_banded, cholesky_banded

log = logging.getLogger(__name__)

DENSE_LIMIT = 64


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    CUTOFF = "CutoffTimeReached"
    ITERATION_LIMIT = "IterationLimit"
    INFEASIBLE = "Infeasible"


@dataclass
class NlpProblem:
    n: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    eq: Optional[Callable] = None
    eq_jacobian: Optional[Callable] = None
    ineq: Optional[Callable] = None
    ineq_jacobian: Optional[Callable] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    n_eq: int = 0
    n_ineq: int = 0
    sparsity: object = None
    curvature: Optional[Callable] = None
    describe_eq: Optional[Callable[[int], str]] = None
    describe_ineq: Optional[Callable[[int], str]] = None

    def __post_init__(self):
        self.lower = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if self.lower.shape != (self.n,) or self.upper.shape != (self.n,):
            raise ValueError("bounds must have the problem dimension")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if (self.eq is None) != (self.eq_jacobian is None) or (self.eq is None and self.n_eq):
            raise ValueError("equality residual and jacobian must be given together with n_eq")
        if (self.ineq is None) != (self.ineq_jacobian is None) or (self.ineq is None and self.n_ineq):
            raise ValueError("inequality residual and jacobian must be given together with n_ineq")

    def c(self, z):
        return np.asarray(self.eq(z), float) if self.n_eq else np.zeros(0)

    def g(self, z):
        return np.asarray(self.ineq(z), float) if self.n_ineq else np.zeros(0)

    def jc(self, z):
        return sp.csr_matrix(self.eq_jacobian(z)) if self.n_eq else sp.csr_matrix((0, self.n))

    def jg(self, z):
        return sp.csr_matrix(self.ineq_jacobian(z)) if self.n_ineq else sp.csr_matrix((0, self.n))


@dataclass(frozen=True)
class SolveOptions:
    max_outer_iterations: int = 40
    max_inner_iterations: int = 150
    tol_kkt: float = 1e-6
    tol_feas: float = 1e-6
    initial_penalty: float = 1e4
    penalty_growth: float = 10.0
    required_decrease: float = 0.25
    max_penalty: float = 1e12
    cutoff_ms: Optional[float] = 50.0
    cutoff_iterations: Optional[int] = None

    def __post_init__(self):
        if self.tol_kkt <= 0 or self.tol_feas <= 0:
            raise ValueError("tolerances must be positive")
        if self.cutoff_ms is not None and self.cutoff_ms <= 0:
            raise ValueError("cutoff_ms must be positive")
        if self.initial_penalty <= 0 or self.penalty_growth <= 1:
            raise ValueError("penalty must be positive and grow")


@dataclass
class WarmStart:
    primal: np.ndarray
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    penalty: float


@dataclass
class SolveResult:
    status: Status
    primal: np.ndarray
    objective: float
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    max_violation: float
    kkt_residual: float
    outer_iterations: int
    inner_iterations: int
    wall_time_ms: float
    penalty: float
    message: str = ""
    trace: list = field(default_factory=list)
    history: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.inner_iterations

    @property
    def success(self) -> bool:
        return self.status is Status.OPTIMAL

    def warm_start(self) -> WarmStart:
        return WarmStart(self.primal.copy(), self.eq_multipliers.copy(),
                         self.ineq_multipliers.copy(), self.penalty)


class _NonFinite(Exception):
    def __init__(self, message):
        super().__init__(message)
        self.message = message


class _Cutoff(Exception):
    pass


def max_violation(problem: NlpProblem, z: np.ndarray) -> float:
    """Largest equality residual or inequality shortfall at ``z``."""
    c, g = problem.c(z), problem.g(z)
    return float(max(np.max(np.abs(c), initial=0.0), np.max(-g, initial=0.0), 0.0))


def kkt_residual(problem: NlpProblem, z, lam, mu) -> float:
    """Scaled projected-gradient and complementarity error.

    Scaling follows the common convention of dividing by
    ``max(1, mean |multiplier| / 100)``.
    """
    grad = problem.gradient(z) - problem.jc(z).T @ lam - problem.jg(z).T @ mu
    stat = np.max(np.abs(np.clip(z - grad, problem.lower, problem.upper) - z), initial=0.0)
    g = problem.g(z)
    comp = np.max(np.abs(np.minimum(np.maximum(g, 0.0), mu)), initial=0.0)
    n_mult = len(lam) + len(mu)
    scale = max(1.0, (np.sum(np.abs(lam)) + np.sum(np.abs(mu))) / max(n_mult, 1) / 100.0)
    return float(max(stat, comp) / scale)


class _Model:
    """Assembles and factorises the positive definite step model."""

    def __init__(self, n):
        self.n = n
        self.bfgs = np.eye(n) if n <= DENSE_LIMIT else None
        self.bfgs_started = False

    def solve(self, matrix, rhs, fixed, damping):
        n = self.n
        matrix = sp.csr_matrix(matrix)
        if self.bfgs is not None:
            dense = matrix.toarray() + self.bfgs
            dense[fixed, :] = 0.0
            dense[:, fixed] = 0.0
            dense[fixed, fixed] = 1.0
            dense[np.diag_indices(n)] += damping * (1.0 + np.abs(np.diag(dense)))
            return cho_solve(cho_factor(dense), rhs)
        coo = matrix.tocoo()
        bw = int(np.max(np.abs(coo.row - coo.col), initial=0))
        if bw <= max(32, n // 8):
            low = coo.row >= coo.col
            ab = np.zeros((bw + 1, n))
            np.add.at(ab, (coo.row[low] - coo.col[low], coo.col[low]), coo.data[low])
            idx = np.flatnonzero(fixed)
            for r in range(1, bw + 1):
                ab[r, idx[idx + r < n]] = 0.0  # column idx, row idx + r
                below = idx - r
                ab[r, below[below >= 0]] = 0.0  # row idx, column idx - r
            ab[0, idx] = 1.0
            ab[0] += damping * (1.0 + np.abs(ab[0]))
            return cho_solve_banded((cholesky_banded(ab, lower=True), True), rhs)
        free = sp.diags((~fixed).astype(float))
        m = free @ matrix @ free + sp.diags(fixed.astype(float))
        m = m + sp.diags(damping * (1.0 + np.abs(m.diagonal())))
        return spla.spsolve(m.tocsc(), rhs)

    def update(self, s, y_rest):
        """Damped BFGS update of the correction term (small problems only)."""
        if self.bfgs is None:
            return
        ss = float(s @ s)
        if ss == 0.0:
            return
        sy = float(s @ y_rest)
        if not self.bfgs_started:
            yy = float(y_rest @ y_rest)
            scale = yy / sy if sy > 0 else np.sqrt(yy / ss)
            self.bfgs *= max(scale, 1e-8)
            self.bfgs_started = True
        bs = self.bfgs @ s
        sbs = float(s @ bs)
        if sbs <= 1e-14 * ss * np.max(np.abs(self.bfgs)):
            return
        theta = 1.0 if sy >= 0.2 * sbs else 0.8 * sbs / (sbs - sy)
        r = theta * y_rest + (1.0 - theta) * bs
        self.bfgs += np.outer(r, r) / float(s @ r) - np.outer(bs, bs) / sbs


class _Evaluator:
    def __init__(self, problem: NlpProblem):
        self.p = problem

    def check(self, name, arr, describe=None):
        arr = np.asarray(arr, dtype=float)
        bad = np.flatnonzero(~np.isfinite(np.atleast_1d(arr)))
        if len(bad):
            where = describe(int(bad[0])) if describe is not None else f"entry {bad[0]}"
            raise _NonFinite(f"non-finite {name}: {where}")
        return arr

    def values(self, z):
        p = self.p
        f = float(self.check("objective", p.objective(z)))
        c = self.check("equality residual", p.c(z), p.describe_eq)
        g = self.check("inequality residual", p.g(z), p.describe_ineq)
        return f, c, g

    def derivatives(self, z):
        p = self.p
        grad = self.check("objective gradient", p.gradient(z))
        jc, jg = p.jc(z), p.jg(z)
        self.check("equality jacobian", jc.data)
        self.check("inequality jacobian", jg.data)
        return grad, jc, jg


def solve(problem: NlpProblem, init, warm: WarmStart | None = None,
          options: SolveOptions | None = None,
          sink: Callable[[dict], None] | None = None) -> SolveResult:
    """Solve ``problem`` from ``init`` (or from ``warm``, which also seeds multipliers and penalty)."""
    opts = options or SolveOptions()
    start = time.perf_counter()
    n = problem.n
    lo, hi = problem.lower, problem.upper
    z = np.asarray(warm.primal if warm is not None else init, dtype=float).copy()
    if z.shape != (n,):
        raise ValueError(f"initial point has shape {z.shape}, expected ({n},)")
    z = np.clip(z, lo, hi)
    if warm is not None:
        lam = np.asarray(warm.eq_multipliers, float).copy()
        mu = np.maximum(np.asarray(warm.ineq_multipliers, float), 0.0)
        rho = float(warm.penalty)
        if lam.shape != (problem.n_eq,) or mu.shape != (problem.n_ineq,):
            raise ValueError("warm-start multipliers do not match the problem")
    else:
        lam = np.zeros(problem.n_eq)
        mu = np.zeros(problem.n_ineq)
        rho = opts.initial_penalty

    ev = _Evaluator(problem)
    trace: list[dict] = []
    history: list[dict] = []
    counters = {"inner": 0, "outer": 0}

    def elapsed_ms():
        return (time.perf_counter() - start) * 1e3

    def emit(record):
        trace.append(record)
        if sink is not None:
            sink(record)

    def finish(status, message=""):
        try:
            f_val, c, g = ev.values(z)
            viol = float(max(np.max(np.abs(c), initial=0.0), np.max(-g, initial=0.0), 0.0))
            kkt = kkt_residual(problem, z, lam, mu)
        except _NonFinite:
            f_val, viol, kkt = float("nan"), float("inf"), float("inf")
        return SolveResult(status, z.copy(), f_val, lam.copy(), mu.copy(), viol, kkt,
                           counters["outer"], counters["inner"], elapsed_ms(), rho, message, trace,
                           history)

    def al_value(f_val, c, g):
        shifted = np.maximum(0.0, mu - rho * g)
        return f_val - lam @ c + 0.5 * rho * (c @ c) + (shifted @ shifted - mu @ mu) / (2.0 * rho)

    def al_parts(x):
        f_val, c, g = ev.values(x)
        return al_value(f_val, c, g), c, g

    def al_gradient(x, c, g):
        grad, jc, jg = ev.derivatives(x)
        shifted = np.maximum(0.0, mu - rho * g)
        return grad - jc.T @ (lam - rho * c) - jg.T @ shifted, jc, jg, shifted

    model = _Model(n)

    def inner(omega):
        """Projected Newton on the augmented Lagrangian; returns the final projected gradient."""
        nonlocal z
        value, c, g = al_parts(z)
        grad, jc, jg, shifted = al_gradient(z, c, g)
        damping = 1e-10
        pg = np.inf
        for _ in range(opts.max_inner_iterations):
            pg = float(np.max(np.abs(np.clip(z - grad, lo, hi) - z), initial=0.0))
            if pg <= omega:
                return pg
            if opts.cutoff_iterations is not None and counters["inner"] >= opts.cutoff_iterations:
                raise _Cutoff
            if opts.cutoff_ms is not None and elapsed_ms() > opts.cutoff_ms:
                raise _Cutoff
            eps = min(1e-3, pg)
            fixed = ((z <= lo + eps) & (grad > 0)) | ((z >= hi - eps) & (grad < 0))
            active = shifted > 0
            structured = rho * (jc.T @ jc) + rho * (jg[active].T @ jg[active])
            if problem.curvature is not None:
                structured = structured + problem.curvature(z)
            rhs = np.where(fixed, 0.0, -grad)
            while True:
                try:
                    d = model.solve(structured, rhs, fixed, damping)
                    break
                except (LinAlgError, RuntimeError):
                    damping = max(10 * damping, 1e-8)
                    if damping > 1e6:
                        raise
            if grad @ d >= 0:  # not a descent direction: fall back to the projected gradient
                d = rhs
            alpha = 1.0
            blocked = None
            while True:
                z_try = np.clip(z + alpha * d, lo, hi)
                try:
                    v_try, c_try, g_try = al_parts(z_try)
                except _NonFinite as exc:
                    v_try, blocked = np.inf, exc
                # slack absorbs roundoff once predicted decreases become tiny
                if v_try <= value + 1e-4 * (grad @ (z_try - z)) + 1e-13 * (1.0 + abs(value)):
                    break
                alpha *= 0.5
                if alpha < 1e-12:
                    if blocked is not None:
                        # every step toward descent hits a non-finite evaluation
                        raise blocked
                    # line search stalled; accept the current point as converged for this omega
                    return pg
            damping = max(damping * 0.3, 1e-10)
            step = z_try - z
            old_grad, old_structured = grad, structured
            z, value, c, g = z_try, v_try, c_try, g_try
            grad, jc, jg, shifted = al_gradient(z, c, g)
            if model.bfgs is not None:
                model.update(step, grad - old_grad - old_structured @ step)
            counters["inner"] += 1
            emit({"iteration": counters["inner"], "outer": counters["outer"],
                  "objective": float(problem.objective(z)),
                  "violation": float(max(np.max(np.abs(c), initial=0.0),
                                         np.max(-g, initial=0.0), 0.0)),
                  "step": float(alpha), "penalty": rho, "damping": damping,
                  "elapsed_ms": elapsed_ms()})
        return pg

    prev_viol = np.inf
    omega = 1e-2
    try:
        # a warm start may already satisfy the KKT conditions
        _, c, g = ev.values(z)
        if (max(np.max(np.abs(c), initial=0.0), np.max(-g, initial=0.0)) <= opts.tol_feas
                and kkt_residual(problem, z, lam, mu) <= opts.tol_kkt):
            return finish(Status.OPTIMAL, "initial point satisfies the optimality conditions")
        for _ in range(opts.max_outer_iterations):
            counters["outer"] += 1
            inner(omega)
            _, c, g = ev.values(z)
            lam = lam - rho * c
            mu = np.maximum(0.0, mu - rho * g)
            viol = float(max(np.max(np.abs(c), initial=0.0), np.max(-g, initial=0.0), 0.0))
            kkt = kkt_residual(problem, z, lam, mu)
            history.append({"outer": counters["outer"], "violation": viol, "kkt": kkt,
                            "penalty": rho, "inner_iterations": counters["inner"]})
            if viol <= opts.tol_feas and kkt <= opts.tol_kkt:
                return finish(Status.OPTIMAL)
            if viol > opts.required_decrease * prev_viol and not (viol <= opts.tol_feas
                                                                  and viol <= prev_viol):
                rho *= opts.penalty_growth
                if rho > opts.max_penalty:
                    return finish(Status.INFEASIBLE, "penalty limit reached without feasibility")
            prev_viol = viol
            omega = max(opts.tol_kkt, min(0.1 * omega, 0.1 * kkt))
    except _Cutoff:
        return finish(Status.CUTOFF, "cutoff reached; returning the best iterate so far")
    except _NonFinite as exc:
        return finish(Status.INFEASIBLE, exc.message)
    return finish(Status.ITERATION_LIMIT, "outer iteration limit reached")
