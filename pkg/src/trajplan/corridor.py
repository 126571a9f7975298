"""Drivable corridor: boundary preprocessing, signed clearance, collision margins."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .geometry import (
    Point2,
    Polyline,
    SpatialIndex,
    build_index,
    build_polyline,
    project_many,
    translate,
)
from .kinematics import VehicleGeometry, VehicleState

log = logging.getLogger(__name__)


class InvalidCorridor(ValueError):
    pass


class SmoothingFailed(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DrivableCorridor:
    """Left/right boundaries and the reference line, all directed along travel."""

    left: Polyline
    right: Polyline
    reference: Polyline
    left_index: SpatialIndex = field(init=False)
    right_index: SpatialIndex = field(init=False)
    reference_index: SpatialIndex = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "left_index", build_index(self.left))
        object.__setattr__(self, "right_index", build_index(self.right))
        object.__setattr__(self, "reference_index", build_index(self.reference))

    @classmethod
    def from_points(cls, left, right, reference) -> "DrivableCorridor":
        return cls(build_polyline(left), build_polyline(right), build_polyline(reference))

    def translated(self, offset) -> "DrivableCorridor":
        """The same corridor moved by ``offset``, reusing the spatial indices."""
        out = object.__new__(DrivableCorridor)
        for name in ("left", "right", "reference"):
            line, index = translate(getattr(self, name), getattr(self, f"{name}_index"), offset)
            object.__setattr__(out, name, line)
            object.__setattr__(out, f"{name}_index", index)
        return out

    def check(self) -> None:
        """Raise InvalidCorridor unless the reference lies inside and all lines agree in direction."""
        ref = self.reference.points
        d_left, d_right = clearance_many(self, ref)[:2]
        bad = np.flatnonzero((d_left <= 0) | (d_right <= 0))
        if len(bad):
            raise InvalidCorridor(
                f"reference vertex {bad[0]} at {tuple(ref[bad[0]])} is not strictly inside the corridor")
        ref_heading = np.concatenate([self.reference.headings, self.reference.headings[-1:]])
        tangent = np.column_stack([np.cos(ref_heading), np.sin(ref_heading)])
        for name, line, index in (("left", self.left, self.left_index),
                                  ("right", self.right, self.right_index)):
            h = project_many(line, index, ref).heading
            dots = np.einsum("ij,ij->i", tangent, np.column_stack([np.cos(h), np.sin(h)]))
            # faces of carved-in obstacles may run perpendicular to the road
            if np.any(dots < -1e-6):
                k = int(np.argmin(dots))
                raise InvalidCorridor(f"{name} boundary runs against the reference line near vertex {k}")


@dataclass(frozen=True)
class SmoothingParams:
    w_smooth: float = 10.0
    w_dev: float = 1.0
    max_dev: float = 0.25
    resolution: float = 0.1
    smoothing_spacing: float = 1.0
    tol: float = 1e-9
    max_iter: int = 20000

    def __post_init__(self):
        for name in ("w_smooth", "w_dev", "max_dev", "resolution", "smoothing_spacing", "tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


# -- resampling and smoothing ---------------------------------------------------


def resample(polyline: Polyline, resolution: float) -> Polyline:
    """Insert evenly spaced vertices so no gap exceeds ``resolution``; original vertices stay."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    p = polyline.points
    out = [p[:1]]
    for a, b in zip(p[:-1], p[1:]):
        seg = math.hypot(*(b - a))
        k = max(1, math.ceil(seg / resolution - 1e-9))
        frac = np.arange(1, k + 1)[:, None] / k
        chunk = a + frac * (b - a)
        chunk[-1] = b
        out.append(chunk)
    return build_polyline(np.concatenate(out))


def _interior_bisectors(points: np.ndarray, interior_side: str) -> np.ndarray:
    d = np.diff(points, axis=0)
    d /= np.hypot(d[:, 0], d[:, 1])[:, None]
    normals = np.column_stack([-d[:, 1], d[:, 0]])
    if interior_side == "right":
        normals = -normals
    bis = np.zeros_like(points)
    bis[1:-1] = normals[:-1] + normals[1:]
    norm = np.hypot(bis[:, 0], bis[:, 1])
    ok = norm > 1e-9
    bis[ok] /= norm[ok, None]
    bis[~ok] = 0.0
    return bis


def smooth_boundary(polyline: Polyline, params: SmoothingParams = SmoothingParams(),
                    interior_side: Literal["left", "right"] = "right") -> Polyline:
    """Round sharp corners by moving vertices toward the corridor interior only.

    Minimises ``w_smooth * sum |second difference|^2 + w_dev * sum |p - p_orig|^2``.
    Each interior vertex may only slide along its inward bisector, by at most
    ``max_dev`` in the infinity norm, so the corridor never grows. End
    vertices are fixed. Solved with accelerated projected gradient.
    """
    if interior_side not in ("left", "right"):
        raise ValueError("interior_side must be 'left' or 'right'")
    p0 = polyline.points
    n = len(p0)
    if n < 3:
        return polyline
    bis = _interior_bisectors(p0, interior_side)
    cap = np.zeros(n)
    inf_norm = np.abs(bis).max(axis=1)
    movable = inf_norm > 0
    cap[movable] = params.max_dev / inf_norm[movable]

    def second_diff(p):
        return p[:-2] - 2.0 * p[1:-1] + p[2:]

    def grad(t):
        r = second_diff(p0 + bis * t[:, None])
        g_p = np.zeros_like(p0)
        g_p[:-2] += r
        g_p[1:-1] -= 2.0 * r
        g_p[2:] += r
        return 2.0 * params.w_smooth * np.einsum("ij,ij->i", g_p, bis) + 2.0 * params.w_dev * t

    step = 1.0 / (32.0 * params.w_smooth + 2.0 * params.w_dev)
    t = np.zeros(n)
    y = t.copy()
    momentum = 1.0
    for _ in range(params.max_iter):
        t_new = np.clip(y - step * grad(y), 0.0, cap)
        # projected-gradient stationarity at the new point
        pg = t_new - np.clip(t_new - grad(t_new), 0.0, cap)
        if np.max(np.abs(pg)) < params.tol:
            t = t_new
            break
        m_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum**2))
        y = t_new + ((momentum - 1.0) / m_new) * (t_new - t)
        if np.dot(t_new - t, y - t_new) < 0:  # adaptive restart
            y, m_new = t_new.copy(), 1.0
        t, momentum = t_new, m_new
    else:
        raise SmoothingFailed(f"boundary smoothing did not converge in {params.max_iter} iterations")
    return build_polyline(p0 + bis * t[:, None])


def prepare_corridor(corridor: DrivableCorridor, params: SmoothingParams = SmoothingParams(),
                     smooth: bool = True) -> DrivableCorridor:
    """Smooth the boundaries (at ``smoothing_spacing``) and densify everything to ``resolution``."""
    lines = {}
    for name, side in (("left", "right"), ("right", "left")):
        line = getattr(corridor, name)
        if smooth:
            try:
                line = smooth_boundary(resample(line, params.smoothing_spacing), params, side)
            except SmoothingFailed:
                log.warning("smoothing of the %s boundary failed; using the raw boundary", name)
        lines[name] = resample(line, params.resolution)
    reference = resample(corridor.reference, params.resolution)
    return DrivableCorridor(lines["left"], lines["right"], reference)


# -- clearance ------------------------------------------------------------------


def clearance_many(corridor: DrivableCorridor, points, hints: dict | None = None):
    """Signed clearances to both boundaries and their gradients.

    Returns ``(d_left, d_right, grad_left, grad_right)``; both distances are
    positive on the corridor-interior side. ``hints`` is an optional dict
    carrying search seeds between calls with the same number of points.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    h = hints if hints is not None else {}
    pl = project_many(corridor.left, corridor.left_index, pts, _seed(h, "left", len(pts)))
    pr = project_many(corridor.right, corridor.right_index, pts, _seed(h, "right", len(pts)))
    if hints is not None:
        hints["left"], hints["right"] = pl.segment_index, pr.segment_index
    return -pl.signed_offset, pr.signed_offset, -pl.normal, pr.normal


def _seed(hints: dict, key: str, n: int):
    seed = hints.get(key)
    return seed if seed is not None and len(seed) == n else None


def signed_clearance(corridor: DrivableCorridor, p) -> tuple[float, float]:
    d_left, d_right, _, _ = clearance_many(corridor, [tuple(p)])
    return float(d_left[0]), float(d_right[0])


def circle_centers(states: np.ndarray, geom: VehicleGeometry) -> np.ndarray:
    """Circle origins (m, n_circles, 2) for states (m, >=3)."""
    states = np.atleast_2d(states)
    c = np.asarray(geom.circle_centers)
    cos, sin = np.cos(states[:, 2]), np.sin(states[:, 2])
    return np.stack([states[:, 0, None] + c * cos[:, None],
                     states[:, 1, None] + c * sin[:, None]], axis=-1)


def collision_margins_many(corridor: DrivableCorridor, states: np.ndarray,
                           geom: VehicleGeometry, with_grad: bool = False,
                           hints: dict | None = None):
    """Margins (m, 2*n_circles), ordered (left, right) per circle.

    With ``with_grad`` also returns d(margin)/d(x, y, theta) as (m, 2*n_circles, 3).
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    m = len(states)
    offsets = np.asarray(geom.circle_centers)
    nc = len(offsets)
    centers = circle_centers(states, geom).reshape(-1, 2)
    d_left, d_right, g_left, g_right = clearance_many(corridor, centers, hints)
    margins = np.empty((m, nc, 2))
    margins[..., 0] = d_left.reshape(m, nc) - geom.circle_radius
    margins[..., 1] = d_right.reshape(m, nc) - geom.circle_radius
    margins = margins.reshape(m, 2 * nc)
    if not with_grad:
        return margins
    dp_dtheta = np.stack([-offsets * np.sin(states[:, 2, None]),
                          offsets * np.cos(states[:, 2, None])], axis=-1)  # (m, nc, 2)
    grads = np.empty((m, nc, 2, 3))
    for side, g in ((0, g_left), (1, g_right)):
        g = g.reshape(m, nc, 2)
        grads[:, :, side, :2] = g
        grads[:, :, side, 2] = np.einsum("mcj,mcj->mc", g, dp_dtheta)
    return margins, grads.reshape(m, 2 * nc, 3)


def collision_margins(corridor: DrivableCorridor, s: VehicleState,
                      geom: VehicleGeometry) -> np.ndarray:
    """Margins ``d - R`` of each circle to the left and right boundary; all >= 0 means no collision."""
    return collision_margins_many(corridor, s.as_array(), geom)[0]


__all__ = [
    "DrivableCorridor", "InvalidCorridor", "Point2", "SmoothingFailed", "SmoothingParams",
    "circle_centers", "clearance_many", "collision_margins", "collision_margins_many",
    "prepare_corridor", "resample", "signed_clearance", "smooth_boundary",
]
