import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from shapely.geometry import LineString, Polygon

from trajplan.corridor import (DrivableCorridor, InvalidCorridor, SmoothingParams,
                               clearance_many, collision_margins, collision_margins_many,
                               prepare_corridor, resample, signed_clearance, smooth_boundary)
from trajplan.geometry import build_polyline, project_many
from trajplan.kinematics import VehicleGeometry, VehicleState


def straight(half_width=2.0, length=50.0):
    return DrivableCorridor.from_points([(0, half_width), (length, half_width)],
                                        [(0, -half_width), (length, -half_width)],
                                        [(0, 0), (length, 0)])


def arc_corridor(radius=30.0, half_width=3.0, sweep=1.2, n=60):
    ang = np.linspace(-math.pi / 2, -math.pi / 2 + sweep, n)

    def ring(r):
        return np.column_stack([r * np.cos(ang), r * np.sin(ang) + radius])

    return DrivableCorridor.from_points(ring(radius - half_width), ring(radius + half_width),
                                        ring(radius))


def turn_angles(points):
    d = np.diff(points, axis=0)
    h = np.arctan2(d[:, 1], d[:, 0])
    return np.abs((np.diff(h) + math.pi) % (2 * math.pi) - math.pi)


def corner():
    """Right-angle left turn at 1 m spacing."""
    leg = np.arange(0.0, 11.0)
    return build_polyline(np.vstack([np.column_stack([leg, 0 * leg]),
                                     np.column_stack([10 + 0 * leg[1:], leg[1:]])]))


def body_polygon(state, geom):
    """Exact vehicle rectangle, reference point at the rear axle."""
    rear = (geom.length - geom.axis_length) / 2
    xs = np.array([-rear, geom.length - rear, geom.length - rear, -rear])
    ys = np.array([-1, -1, 1, 1]) * geom.width / 2
    c, s = math.cos(state[2]), math.sin(state[2])
    return Polygon(np.column_stack([state[0] + c * xs - s * ys, state[1] + s * xs + c * ys]))


def circle_slack(geom, samples=400):
    """Two-sided Hausdorff distance between the rectangle and the circle union, sampled."""
    rear = (geom.length - geom.axis_length) / 2
    gx, gy = np.meshgrid(np.linspace(-rear, geom.length - rear, samples),
                         np.linspace(-geom.width / 2, geom.width / 2, samples // 4))
    rect = np.column_stack([gx.ravel(), gy.ravel()])
    centers = np.array([[c, 0.0] for c in geom.circle_centers])
    to_circles = np.min(np.hypot(*(rect[:, None, :] - centers[None]).transpose(2, 0, 1)), axis=1)
    rect_to_union = np.max(np.maximum(to_circles - geom.circle_radius, 0.0))
    phi = np.linspace(0, 2 * math.pi, samples)
    rim = np.vstack([c + geom.circle_radius * np.column_stack([np.cos(phi), np.sin(phi)])
                     for c in centers])
    dx = np.maximum(np.maximum(-rear - rim[:, 0], rim[:, 0] - (geom.length - rear)), 0.0)
    dy = np.maximum(np.abs(rim[:, 1]) - geom.width / 2, 0.0)
    union_to_rect = np.max(np.hypot(dx, dy))
    return max(rect_to_union, union_to_rect) + 1e-3


class TestResample:
    def test_unit_segment(self):
        out = resample(build_polyline([(0, 0), (1, 0)]), 0.1)
        assert len(out.points) == 11
        assert np.max(np.diff(out.cum_arc)) <= 0.1 + 1e-12

    @given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=2, max_size=6),
           st.floats(0.05, 2.0))
    def test_keeps_vertices_and_spacing(self, pts, res):
        try:
            line = build_polyline(pts)
        except ValueError:
            return
        out = resample(line, res)
        assert np.max(np.diff(out.cum_arc)) <= res + 1e-9
        assert out.length == pytest.approx(line.length, rel=1e-12)
        for p in line.points:
            assert np.min(np.hypot(*(out.points - p).T)) <= 1e-12

    def test_rejects_nonpositive_resolution(self):
        with pytest.raises(ValueError):
            resample(build_polyline([(0, 0), (1, 0)]), 0.0)


class TestSmoothing:
    def test_straight_is_fixed_point(self):
        line = resample(build_polyline([(0, 0), (10, 0)]), 1.0)
        out = smooth_boundary(line, SmoothingParams(), "right")
        np.testing.assert_allclose(out.points, line.points, atol=1e-12)

    def test_corner_turn_angle_decreases(self):
        line = corner()
        out = smooth_boundary(line, SmoothingParams(max_dev=0.3), "left")
        assert turn_angles(out.points).max() < turn_angles(line.points).max()

    def test_moves_only_inward_and_within_cap(self):
        line = corner()
        params = SmoothingParams(max_dev=0.3)
        out = smooth_boundary(line, params, "left")
        assert np.max(np.abs(out.points - line.points)) <= params.max_dev + 1e-9
        # interior declared on the left, so no vertex may end up right of the raw line
        offsets = project_many(line, None, out.points).signed_offset
        assert np.all(offsets >= -1e-9)
        assert offsets.max() > 0.1

    @given(st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=12), st.floats(0.05, 0.5),
           st.sampled_from(["left", "right"]))
    def test_cap_and_conservativeness_on_random_boundaries(self, turns, cap, side):
        heading = np.cumsum(turns)
        pts = np.vstack([[0.0, 0.0], np.cumsum(np.column_stack([np.cos(heading),
                                                                np.sin(heading)]), axis=0)])
        try:
            line = build_polyline(pts)
        except ValueError:
            return
        out = smooth_boundary(line, SmoothingParams(max_dev=cap), side)
        assert np.max(np.abs(out.points - line.points)) <= cap + 1e-9
        # interior clearance of every vertex never shrinks: each moved vertex lands
        # on the interior side of the segments it came from
        sign = -1.0 if side == "right" else 1.0
        for i in range(1, len(line.points) - 1):
            for k in (i - 1, i):
                a, b = line.points[k], line.points[k + 1]
                d = b - a
                cross = d[0] * (out.points[i, 1] - a[1]) - d[1] * (out.points[i, 0] - a[0])
                assert sign * cross / np.hypot(*d) >= -1e-9

    def test_prepared_corridor_never_grows(self):
        raw = DrivableCorridor.from_points([(0, 2), (20, 2), (20, 22)],
                                           [(0, -2), (24, -2), (24, 22)],
                                           [(0, 0), (22, 0), (22, 22)])
        smooth = prepare_corridor(raw, SmoothingParams(), smooth=True)
        probe = resample(raw.reference, 0.5).points
        dl0, dr0 = clearance_many(raw, probe)[:2]
        dl1, dr1 = clearance_many(smooth, probe)[:2]
        assert np.all(dl1 <= dl0 + 1e-9) and np.all(dr1 <= dr0 + 1e-9)
        assert np.max(np.diff(smooth.left.cum_arc)) <= 0.1 + 1e-9

    def test_unsmoothed_corridor_only_densified(self):
        raw = straight()
        out = prepare_corridor(raw, SmoothingParams(), smooth=False)
        assert np.allclose(out.left.points[:, 1], 2.0)
        assert len(out.left.points) == 501


class TestClearance:
    def test_examples(self):
        c = straight()
        assert signed_clearance(c, (5, 0)) == (2.0, 2.0)
        assert signed_clearance(c, (5, 3)) == (-1.0, 5.0)

    def test_magnitude_matches_dense_sampling(self, rng):
        c = arc_corridor()
        pts = rng.normal(0, 4, (200, 2)) + c.reference.point_at(20.0)
        dl, dr = clearance_many(c, pts)[:2]
        for line, d in ((c.left, dl), (c.right, dr)):
            samples = np.vstack([line.point_at(s) for s in np.arange(0, line.length, 2e-3)])
            dense = np.min(np.hypot(*(pts[:, None] - samples[None]).transpose(2, 0, 1)), axis=1)
            assert np.all(np.abs(d) <= dense + 1e-9)
            assert np.all(np.abs(d) >= dense - 2e-3)

    def test_reference_outside_rejected(self):
        bad = DrivableCorridor.from_points([(0, 2), (10, 2)], [(0, -2), (10, -2)],
                                           [(0, 3), (10, 3)])
        with pytest.raises(InvalidCorridor):
            bad.check()

    def test_reversed_boundary_rejected(self):
        bad = DrivableCorridor.from_points([(10, 2), (0, 2)], [(0, -2), (10, -2)],
                                           [(0, 0), (10, 0)])
        with pytest.raises(InvalidCorridor):
            bad.check()


class TestMargins:
    geom = VehicleGeometry(circle_radius=1.0)

    def test_centerline_margins(self):
        m = collision_margins(straight(), VehicleState(x=10.0), self.geom)
        np.testing.assert_allclose(m, [1, 1, 1, 1], atol=1e-12)

    def test_left_offset_violates(self):
        m = collision_margins(straight(), VehicleState(x=10.0, y=1.5), self.geom)
        np.testing.assert_allclose(m[[0, 2]], [-0.5, -0.5], atol=1e-12)
        np.testing.assert_allclose(m[[1, 3]], [2.5, 2.5], atol=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        c = prepare_corridor(arc_corridor(), SmoothingParams(), smooth=False)
        states = np.zeros((100, 6))
        states[:, :2] = c.reference.point_at(15.0) + rng.normal(0, 1.0, (100, 2))
        states[:, 2] = rng.uniform(-0.5, 1.5, 100)
        _, grad = collision_margins_many(c, states, VehicleGeometry(), with_grad=True)
        h = 1e-7
        for k in range(3):
            e = np.zeros(6)
            e[k] = h
            fd = (collision_margins_many(c, states + e, VehicleGeometry())
                  - collision_margins_many(c, states - e, VehicleGeometry())) / (2 * h)
            np.testing.assert_allclose(grad[..., k], fd, atol=1e-5)

    def test_lipschitz_along_paths(self, rng):
        """Margins never jump: a small pose step moves them by at most the circle displacement."""
        c = prepare_corridor(arc_corridor(), SmoothingParams(), smooth=True)
        geom = VehicleGeometry()
        reach = max(abs(o) for o in geom.circle_centers)
        start = np.array([*c.reference.point_at(10.0), 0.2, 0, 0, 0])
        steps = rng.normal(0, 1e-2, (2000, 6))
        steps[:, 3:] = 0
        path = start + np.cumsum(steps, axis=0)
        m = collision_margins_many(c, path, geom)
        move = np.hypot(*np.diff(path[:, :2], axis=0).T) + reach * np.abs(np.diff(path[:, 2]))
        assert np.all(np.abs(np.diff(m, axis=0)) <= move[:, None] + 1e-12)

    def test_sign_agrees_with_polygon_oracle(self, rng):
        c = arc_corridor()
        geom = VehicleGeometry()
        slack = circle_slack(geom)
        road = Polygon(np.vstack([c.left.points, c.right.points[::-1]]))
        bounds = [LineString(c.left.points), LineString(c.right.points)]
        decided = 0
        for _ in range(600):
            base = c.reference.point_at(rng.uniform(10.0, 25.0))
            state = np.array([*(base + rng.normal(0, 1.5, 2)), rng.uniform(-0.3, 1.5), 0, 0, 0])
            m = collision_margins_many(c, state, geom)[0]
            body = body_polygon(state, geom)
            if m.min() > slack:
                assert road.contains(body) and not any(b.intersects(body) for b in bounds)
                decided += 1
            elif m.min() < -slack:
                assert not road.contains(body)
                decided += 1
        assert decided > 100
