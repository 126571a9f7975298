"""Synthetic scenario generators for tests, benchmarks and the bundled corpus."""

from __future__ import annotations

import math

import numpy as np

from .corridor import DrivableCorridor
from .kinematics import KinematicBounds, VehicleGeometry, VehicleState
from .scenario import ObjectiveWeights, Scenario


def _line(x0, x1, y, step=1.0):
    n = max(2, int(round((x1 - x0) / step)) + 1)
    xs = np.linspace(x0, x1, n)
    return np.column_stack([xs, np.full(n, y)])


def _with_bumps(base: np.ndarray, bumps, toward: float) -> np.ndarray:
    """Carve rectangular obstacles into a straight boundary running along +x.

    Each bump is ``(x_start, x_end, offset)``: the boundary is displaced by
    ``offset`` (in +y when ``toward`` > 0) between ``x_start`` and ``x_end``.
    """
    y = base[0, 1]
    pts = [base[0]]
    xs = base[:, 0]
    events = sorted(bumps)
    i = 1
    for x_a, x_b, off in events:
        while i < len(xs) and xs[i] < x_a:
            pts.append(base[i])
            i += 1
        yy = y + math.copysign(off, toward)
        pts += [(x_a, y), (x_a, yy), (x_b, yy), (x_b, y)]
        while i < len(xs) and xs[i] <= x_b:
            i += 1
    pts += list(base[i:])
    return np.array(pts, dtype=float)


def straight_road(length=150.0, half_width=3.0, v_target=10.0, v0=None, y0=0.0,
                  t_max=6.0, dt=0.1, name="straight") -> Scenario:
    corridor = DrivableCorridor.from_points(
        _line(-10.0, length, half_width), _line(-10.0, length, -half_width),
        _line(-10.0, length, 0.0))
    s0 = VehicleState(0.0, y0, 0.0, 0.0, v_target if v0 is None else v0, 0.0)
    return Scenario(s0, corridor, v_target, t_max, dt, name=name)


def obstacle_road(v0=3.0, v_target=8.0, obstacle=(16.0, 24.0), intrusion=1.45,
                  t_max=8.0, dt=0.1, length=160.0, name="obstacle") -> Scenario:
    """Two-lane road; a parked vehicle intrudes from the right edge into the ego lane.

    Ego lane is centred on ``y = 0`` with its right edge at ``y = -1.75``;
    the adjacent lane up to ``y = 5.25`` is drivable.
    """
    right = _with_bumps(_line(-10.0, length, -1.75), [(*obstacle, intrusion)], +1.0)
    corridor = DrivableCorridor.from_points(
        _line(-10.0, length, 5.25), right, _line(-10.0, length, 0.0))
    s0 = VehicleState(0.0, 0.0, 0.0, 0.0, v0, 0.0)
    return Scenario(s0, corridor, v_target, t_max, dt, name=name)


def slalom_road(v0=6.0, v_target=8.0, t_max=8.0, dt=0.1, length=200.0,
                name="slalom") -> Scenario:
    """Obstacles alternate between both road edges."""
    right = _with_bumps(_line(-10.0, length, -2.5),
                        [(15.0, 21.0, 1.6), (55.0, 61.0, 1.6)], +1.0)
    left = _with_bumps(_line(-10.0, length, 2.5), [(35.0, 41.0, 1.6)], -1.0)
    corridor = DrivableCorridor.from_points(left, right, _line(-10.0, length, 0.0))
    return Scenario(VehicleState(0.0, 0.0, 0.0, 0.0, v0, 0.0), corridor, v_target, t_max, dt,
                    name=name)


def sharp_corner_road(v0=5.0, v_target=7.0, t_max=8.0, dt=0.1, name="sharp_corner") -> Scenario:
    """A parked vehicle with a sharp-cornered footprint on a narrow lane.

    Boundaries are sampled at 1 m like a raw map; the obstacle corner
    forces the planned path to graze a 90 degree boundary corner.
    """
    return obstacle_road(v0=v0, v_target=v_target, obstacle=(20.0, 24.0), intrusion=1.45,
                         t_max=t_max, dt=dt, name=name)


def curved_road(radius=60.0, sweep=math.pi / 2, half_width=2.5, v_target=8.0, v0=None,
                lateral=0.0, t_max=6.0, dt=0.1, lead=20.0, name="curve") -> Scenario:
    """Straight lead-in followed by a left-hand arc of the given radius."""
    def centreline(offset):
        pts = [(-lead, -offset), (0.0, -offset)]
        r = radius + offset
        for phi in np.linspace(0.0, sweep, max(8, int(r * sweep)))[1:]:
            pts.append((r * math.sin(phi), radius - r * math.cos(phi)))
        end = np.array(pts[-1])
        heading = np.array([math.cos(sweep), math.sin(sweep)])
        pts.append(tuple(end + 60.0 * heading))
        return np.array(pts)

    corridor = DrivableCorridor.from_points(centreline(-half_width), centreline(half_width),
                                            centreline(0.0))
    v = v_target if v0 is None else v0
    s0 = VehicleState(-lead * 0.75, lateral, 0.0, 0.0, v, 0.0)
    return Scenario(s0, corridor, v_target, t_max, dt, name=name)


def default_corpus() -> list[Scenario]:
    """Scenarios shipped with the package (also written to the data directory)."""
    return [
        straight_road(name="straight"),
        straight_road(v_target=12.0, v0=8.0, y0=0.6, name="straight_offset"),
        obstacle_road(name="obstacle"),
        obstacle_road(v0=6.0, v_target=8.0, obstacle=(35.0, 45.0), intrusion=1.2,
                      name="obstacle_far"),
        slalom_road(),
        sharp_corner_road(),
        curved_road(name="curve"),
        curved_road(radius=40.0, v_target=6.0, lateral=0.4, name="curve_tight"),
        curved_road(radius=120.0, sweep=math.pi / 3, v_target=12.0, name="curve_wide"),
        straight_road(v_target=5.0, v0=2.0, half_width=2.2, name="straight_slow"),
    ]


__all__ = ["curved_road", "default_corpus", "obstacle_road", "sharp_corner_road", "slalom_road",
           "straight_road", "KinematicBounds", "ObjectiveWeights", "VehicleGeometry"]
