"""Central-difference verification of the analytic objective gradient and constraint Jacobians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nlp import BLOCK, TrajectoryNlp


@dataclass
class DerivativeReport:
    max_rel_error: float
    worst_function: str      # "objective", "eq" or "ineq"
    worst_row: int
    worst_col: int
    worst_description: str
    points: int
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold

    def to_dict(self) -> dict:
        return {"max_rel_error": self.max_rel_error, "worst_function": self.worst_function,
                "worst_row": self.worst_row, "worst_col": self.worst_col,
                "worst": self.worst_description, "points": self.points,
                "threshold": self.threshold, "passed": self.passed}


def random_points(nlp: TrajectoryNlp, center: np.ndarray, count: int, rng: np.random.Generator,
                  spread: float = 0.05) -> list[np.ndarray]:
    """Points scattered around ``center`` and kept inside the variable bounds.

    The spread is relative to each variable's bound width (or 1 when unbounded)
    so controls stay within their limits instead of piling up on them.
    """
    lo, hi = nlp.bounds()
    width = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
    out = []
    for _ in range(count):
        z = center + spread * width * rng.standard_normal(center.shape)
        margin = 1e-3 * width
        out.append(np.clip(z, lo + margin, hi - margin))
    return out


def _rel(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))


def check_derivatives(nlp: TrajectoryNlp, points, step: float = 1e-6,
                      threshold: float = 1e-5) -> DerivativeReport:
    """Largest elementwise relative error |analytic - numeric| / max(1, |numeric|)."""
    pattern = nlp.pattern
    n_blocks = nlp.n_var // BLOCK
    worst = (-1.0, "objective", 0, 0)
    for z in points:
        z = np.asarray(z, dtype=float)
        g = nlp.gradient(z)
        num = np.empty_like(z)
        for k in range(len(z)):
            e = np.zeros_like(z)
            e[k] = step
            num[k] = (nlp.objective(z + e) - nlp.objective(z - e)) / (2.0 * step)
        err = _rel(g, num)
        k = int(np.argmax(err))
        if err[k] > worst[0]:
            worst = (float(err[k]), "objective", 0, k)
        for name, func, jac, rows, cols in (
                ("eq", nlp.eq_constraints, nlp.eq_jacobian, pattern.eq_rows, pattern.eq_cols),
                ("ineq", nlp.ineq_constraints, nlp.ineq_jacobian, pattern.ineq_rows,
                 pattern.ineq_cols)):
            numeric = _fd_sparse(func, z, step, rows, cols, n_blocks)
            analytic = jac(z).toarray()
            err = _rel(analytic, numeric)
            r, c = np.unravel_index(int(np.argmax(err)), err.shape)
            if err[r, c] > worst[0]:
                worst = (float(err[r, c]), name, int(r), int(c))
    err, name, row, col = worst
    return DerivativeReport(err, name, row, col, describe(nlp, name, row, col), len(points),
                            threshold)


def _fd_sparse(func, z, step, rows, cols, n_blocks):
    """Central-difference Jacobian with a column coloring of stride three blocks.

    Any row of the trajectory constraints touches at most two consecutive
    blocks, so columns three blocks apart can be perturbed together; the
    declared sparsity pattern assigns each difference to its true row. Entries
    outside the pattern are also checked: they must stay zero.
    """
    base = func(z)
    jac = np.zeros((len(base), len(z)))
    owner = np.full((len(base), len(z)), False)
    owner[rows, cols] = True
    for offset in range(3 * BLOCK):
        first, slot = divmod(offset, BLOCK)
        group = np.arange(first, n_blocks, 3) * BLOCK + slot
        e = np.zeros_like(z)
        e[group] = step
        diff = (func(z + e) - func(z - e)) / (2.0 * step)
        sub = owner[:, group]
        hit = sub.any(axis=1)
        # a row outside the pattern for every column in the group should not move at all
        stray = np.flatnonzero(~hit & (np.abs(diff) > 0))
        for col in group if len(stray) else ():
            e1 = np.zeros_like(z)
            e1[col] = step
            jac[stray, col] = ((func(z + e1) - func(z - e1)) / (2.0 * step))[stray]
        r_idx, g_idx = np.nonzero(sub)
        jac[r_idx, group[g_idx]] = diff[r_idx]
    return jac


def describe(nlp: TrajectoryNlp, function: str, row: int, col: int) -> str:
    names = ("x", "y", "theta", "kappa", "v", "a", "j", "kappa_dot")
    knot, slot = divmod(col, BLOCK)
    var = f"column {col} ({names[slot]} of block {knot})"
    if function == "objective":
        return f"objective gradient, {var}"
    if function == "eq":
        return f"equality row {row} ({nlp.describe_eq_row(row)}), {var}"
    return f"inequality row {row} ({nlp.describe_ineq_row(row)}), {var}"
