"""Directed polylines, point-to-polyline projection and a packed R-tree.

The nearest-segment search is the hot path of every objective and constraint
evaluation, so the scan kernels are compiled with numba. The indexed and the
exhaustive search share the same per-segment distance routine, which keeps
their results bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numba
import numpy as np

MIN_VERTEX_SPACING = 1e-6
NODE_CAPACITY = 8


class InvalidPolyline(ValueError):
    pass


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True, eq=False)
class Polyline:
    """Directed polyline with cumulative arc length per vertex."""

    points: np.ndarray
    cum_arc: np.ndarray
    directed: bool = True

    def __post_init__(self):
        self.points.setflags(write=False)
        self.cum_arc.setflags(write=False)

    @property
    def n_segments(self) -> int:
        return len(self.points) - 1

    @property
    def length(self) -> float:
        return float(self.cum_arc[-1])

    @property
    def headings(self) -> np.ndarray:
        d = np.diff(self.points, axis=0)
        return np.arctan2(d[:, 1], d[:, 0])

    def point_at(self, s: float) -> np.ndarray:
        """Point at arc length ``s`` (clamped to the polyline ends)."""
        s = min(max(s, 0.0), self.length)
        k = int(np.searchsorted(self.cum_arc, s, side="right") - 1)
        k = min(max(k, 0), self.n_segments - 1)
        seg = self.cum_arc[k + 1] - self.cum_arc[k]
        t = (s - self.cum_arc[k]) / seg
        return self.points[k] + t * (self.points[k + 1] - self.points[k])


class Projection(NamedTuple):
    foot: Point2
    heading: float
    arc_length: float
    signed_offset: float
    segment_index: int


def build_polyline(points: Sequence) -> Polyline:
    """Build a polyline, merging vertices closer than 1e-6 m to their predecessor."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise InvalidPolyline("polyline coordinates must be finite")
    if len(pts) == 0:
        raise InvalidPolyline("polyline needs at least 2 distinct points, got 0")
    kept = [pts[0]]
    for p in pts[1:]:
        if math.hypot(p[0] - kept[-1][0], p[1] - kept[-1][1]) >= MIN_VERTEX_SPACING:
            kept.append(p)
    if len(kept) < 2:
        raise InvalidPolyline(f"polyline needs at least 2 distinct points, got {len(kept)}")
    arr = np.array(kept)
    seg = np.hypot(*np.diff(arr, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return Polyline(arr, cum)


# -- compiled kernels -------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _segment_d2(qx, qy, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    t = ((qx - ax) * dx + (qy - ay) * dy) / (dx * dx + dy * dy)
    if t <= 0.0:
        t = 0.0
        fx = ax
        fy = ay
    elif t >= 1.0:
        t = 1.0
        fx = bx
        fy = by
    else:
        fx = ax + t * dx
        fy = ay + t * dy
    ex = qx - fx
    ey = qy - fy
    return ex * ex + ey * ey, t


@numba.njit(cache=True)
def _scan_nearest(qx, qy, pts):
    best = np.inf
    best_k = -1
    best_t = 0.0
    for k in range(pts.shape[0] - 1):
        d2, t = _segment_d2(qx, qy, pts[k, 0], pts[k, 1], pts[k + 1, 0], pts[k + 1, 1])
        if d2 < best:
            best = d2
            best_k = k
            best_t = t
    return best_k, best_t


@numba.njit(cache=True, inline="always")
def _box_d2(qx, qy, box):
    dx = 0.0
    if qx < box[0]:
        dx = box[0] - qx
    elif qx > box[2]:
        dx = qx - box[2]
    dy = 0.0
    if qy < box[1]:
        dy = box[1] - qy
    elif qy > box[3]:
        dy = qy - box[3]
    return dx * dx + dy * dy


@numba.njit(cache=True)
def _tree_nearest(qx, qy, pts, boxes, child_lo, child_hi, leaf_parent, seg_order, root,
                  hint, stack, order_d, order_i):
    best = np.inf
    best_k = -1
    best_t = 0.0
    if hint >= 0:
        # any real segment is a valid upper bound; the search still finds the exact winner
        best, best_t = _segment_d2(qx, qy, pts[hint, 0], pts[hint, 1],
                                   pts[hint + 1, 0], pts[hint + 1, 1])
        best_k = hint
    top = 0
    stack[top] = root
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        # conservative pruning: rounding in the foot point must never drop a tie
        if _box_d2(qx, qy, boxes[node]) > best * (1.0 + 1e-9) + 1e-300:
            continue
        if leaf_parent[node]:
            for p in range(child_lo[node], child_hi[node]):
                k = seg_order[p]
                d2, t = _segment_d2(qx, qy, pts[k, 0], pts[k, 1], pts[k + 1, 0], pts[k + 1, 1])
                if d2 < best or (d2 == best and k < best_k):
                    best = d2
                    best_k = k
                    best_t = t
        else:
            m = 0
            for c in range(child_lo[node], child_hi[node]):
                d = _box_d2(qx, qy, boxes[c])
                # insertion sort, farthest first so the nearest child pops first
                j = m
                while j > 0 and order_d[j - 1] < d:
                    order_d[j] = order_d[j - 1]
                    order_i[j] = order_i[j - 1]
                    j -= 1
                order_d[j] = d
                order_i[j] = c
                m += 1
            for j in range(m):
                stack[top] = order_i[j]
                top += 1
    return best_k, best_t


@numba.njit(cache=True)
def _finish(qx, qy, pts, k, t, out, i):
    nseg = pts.shape[0] - 1
    ax = pts[k, 0]
    ay = pts[k, 1]
    dx = pts[k + 1, 0] - ax
    dy = pts[k + 1, 1] - ay
    if t <= 0.0:
        fx, fy = ax, ay
    elif t >= 1.0:
        fx, fy = pts[k + 1, 0], pts[k + 1, 1]
    else:
        fx, fy = ax + t * dx, ay + t * dy
    ex = qx - fx
    ey = qy - fy
    dist = math.sqrt(ex * ex + ey * ey)
    seg_len = math.sqrt(dx * dx + dy * dy)
    nx = -dy / seg_len
    ny = dx / seg_len
    # at an interior vertex the side is decided by the averaged (pseudo) normal
    if t <= 0.0 and k > 0:
        px = pts[k, 0] - pts[k - 1, 0]
        py = pts[k, 1] - pts[k - 1, 1]
        pl = math.sqrt(px * px + py * py)
        sx, sy = nx - py / pl, ny + px / pl
    elif t >= 1.0 and k < nseg - 1:
        px = pts[k + 2, 0] - pts[k + 1, 0]
        py = pts[k + 2, 1] - pts[k + 1, 1]
        pl = math.sqrt(px * px + py * py)
        sx, sy = nx - py / pl, ny + px / pl
    else:
        sx, sy = nx, ny
    side = ex * sx + ey * sy
    sign = -1.0 if side < 0.0 else 1.0
    out[i, 0] = k
    out[i, 1] = t
    out[i, 2] = fx
    out[i, 3] = fy
    out[i, 4] = sign * dist
    if dist > 0.0:
        out[i, 5] = sign * ex / dist
        out[i, 6] = sign * ey / dist
    else:
        out[i, 5] = nx
        out[i, 6] = ny


@numba.njit(cache=True)
def _project_batch_tree(q, pts, boxes, child_lo, child_hi, leaf_parent, seg_order, root,
                        hints):
    out = np.empty((q.shape[0], 7))
    stack = np.empty(256, dtype=np.int64)
    order_d = np.empty(NODE_CAPACITY, dtype=np.float64)
    order_i = np.empty(NODE_CAPACITY, dtype=np.int64)
    for i in range(q.shape[0]):
        k, t = _tree_nearest(q[i, 0], q[i, 1], pts, boxes, child_lo, child_hi,
                             leaf_parent, seg_order, root, hints[i], stack, order_d, order_i)
        _finish(q[i, 0], q[i, 1], pts, k, t, out, i)
    return out


@numba.njit(cache=True)
def _project_batch_scan(q, pts):
    out = np.empty((q.shape[0], 7))
    for i in range(q.shape[0]):
        k, t = _scan_nearest(q[i, 0], q[i, 1], pts)
        _finish(q[i, 0], q[i, 1], pts, k, t, out, i)
    return out


# -- spatial index ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpatialIndex:
    """Sort-tile-recursive packed R-tree over the segments of one polyline.

    Nodes are stored level by level in flat arrays; the children of a node
    are a contiguous range of the level below (or of ``seg_order`` for the
    lowest level).
    """

    boxes: np.ndarray
    child_lo: np.ndarray
    child_hi: np.ndarray
    leaf_parent: np.ndarray
    seg_order: np.ndarray
    root: int
    n_leaves: int


def translate(polyline: Polyline, index: SpatialIndex, offset) -> tuple[Polyline, SpatialIndex]:
    """Shift a polyline and its index by ``offset`` without rebuilding the tree.

    Subtracting a constant is monotone in floating point, so the shifted
    boxes are exactly the boxes of the shifted segments.
    """
    off = np.asarray(offset, dtype=float)
    moved = Polyline(polyline.points + off, polyline.cum_arc.copy(), polyline.directed)
    boxes = np.ascontiguousarray(index.boxes + np.concatenate([off, off]))
    return moved, SpatialIndex(boxes, index.child_lo, index.child_hi, index.leaf_parent,
                               index.seg_order, index.root, index.n_leaves)


def _str_order(centers: np.ndarray, capacity: int) -> np.ndarray:
    n = len(centers)
    n_nodes = math.ceil(n / capacity)
    n_slices = math.ceil(math.sqrt(n_nodes))
    by_x = np.argsort(centers[:, 0], kind="stable")
    slice_size = n_slices * capacity
    order = []
    for s in range(0, n, slice_size):
        chunk = by_x[s:s + slice_size]
        order.append(chunk[np.argsort(centers[chunk, 1], kind="stable")])
    return np.concatenate(order)


def build_index(polyline: Polyline, capacity: int = NODE_CAPACITY) -> SpatialIndex:
    """Bulk-load an R-tree whose leaves are the polyline segments."""
    if capacity != NODE_CAPACITY:
        raise ValueError(f"node capacity is fixed at {NODE_CAPACITY}")
    p = polyline.points
    seg_boxes = np.column_stack([
        np.minimum(p[:-1, 0], p[1:, 0]), np.minimum(p[:-1, 1], p[1:, 1]),
        np.maximum(p[:-1, 0], p[1:, 0]), np.maximum(p[:-1, 1], p[1:, 1]),
    ])
    seg_order = _str_order(0.5 * (seg_boxes[:, :2] + seg_boxes[:, 2:]), capacity)
    items = seg_boxes[seg_order]

    levels = []  # (boxes, lo, hi) per level, children indices relative to level below
    first = True
    while True:
        n = len(items)
        if not first:
            # re-tile the upper level spatially as well
            order = _str_order(0.5 * (items[:, :2] + items[:, 2:]), capacity)
            items = items[order]
            levels[-1] = tuple(a[order] for a in levels[-1])
        lo = np.arange(0, n, capacity)
        hi = np.minimum(lo + capacity, n)
        boxes = np.array([
            np.concatenate([items[a:b, :2].min(axis=0), items[a:b, 2:].max(axis=0)])
            for a, b in zip(lo, hi)
        ])
        levels.append((boxes, lo, hi))
        first = False
        if len(boxes) == 1:
            break
        items = boxes

    # flatten: root level first, lowest level last
    levels.reverse()
    offsets = np.cumsum([0] + [len(b) for b, _, _ in levels])
    all_boxes, all_lo, all_hi, leaf_parent = [], [], [], []
    for depth, (boxes, lo, hi) in enumerate(levels):
        is_lowest = depth == len(levels) - 1
        shift = 0 if is_lowest else offsets[depth + 1]
        all_boxes.append(boxes)
        all_lo.append(lo + shift)
        all_hi.append(hi + shift)
        leaf_parent.append(np.full(len(boxes), is_lowest))
    return SpatialIndex(
        boxes=np.ascontiguousarray(np.concatenate(all_boxes)),
        child_lo=np.concatenate(all_lo).astype(np.int64),
        child_hi=np.concatenate(all_hi).astype(np.int64),
        leaf_parent=np.concatenate(leaf_parent),
        seg_order=seg_order.astype(np.int64),
        root=0,
        n_leaves=polyline.n_segments,
    )


# -- projection ---------------------------------------------------------------


class BatchProjection(NamedTuple):
    """Vectorised projection results; ``normal`` is d(signed_offset)/d(query)."""

    segment_index: np.ndarray
    t: np.ndarray
    foot: np.ndarray
    signed_offset: np.ndarray
    normal: np.ndarray
    heading: np.ndarray
    arc_length: np.ndarray


def _package(polyline: Polyline, raw: np.ndarray) -> BatchProjection:
    k = raw[:, 0].astype(np.int64)
    p = polyline.points
    d = p[k + 1] - p[k]
    seg_len = polyline.cum_arc[k + 1] - polyline.cum_arc[k]
    return BatchProjection(
        segment_index=k,
        t=raw[:, 1],
        foot=raw[:, 2:4],
        signed_offset=raw[:, 4],
        normal=raw[:, 5:7],
        heading=np.arctan2(d[:, 1], d[:, 0]),
        arc_length=polyline.cum_arc[k] + raw[:, 1] * seg_len,
    )


def project_many(polyline: Polyline, index: SpatialIndex | None, queries,
                 hints=None) -> BatchProjection:
    """Project many points; pass ``index=None`` for the exhaustive scan.

    ``hints`` (segment index per query, -1 for none) only seed the search
    bound, e.g. with the segments found at the previous optimizer iterate;
    results do not depend on them.
    """
    q = np.ascontiguousarray(np.asarray(queries, dtype=float).reshape(-1, 2))
    if index is None:
        raw = _project_batch_scan(q, polyline.points)
    else:
        if hints is None:
            hints = np.full(len(q), -1, dtype=np.int64)
        else:
            hints = np.ascontiguousarray(hints, dtype=np.int64)
            if hints.shape != (len(q),) or hints.max(initial=-1) >= polyline.n_segments:
                raise ValueError("hints must hold one valid segment index (or -1) per query")
        raw = _project_batch_tree(q, polyline.points, index.boxes, index.child_lo,
                                  index.child_hi, index.leaf_parent, index.seg_order,
                                  index.root, hints)
    return _package(polyline, raw)


def project(polyline: Polyline, index: SpatialIndex | None, query) -> Projection:
    """Globally nearest foot point of ``query`` on ``polyline``.

    The foot is clamped to segment endpoints; at shared vertices the lower
    segment index wins. ``signed_offset`` is positive left of the direction
    of travel.
    """
    b = project_many(polyline, index, query)
    return Projection(
        foot=Point2(float(b.foot[0, 0]), float(b.foot[0, 1])),
        heading=float(b.heading[0]),
        arc_length=float(b.arc_length[0]),
        signed_offset=float(b.signed_offset[0]),
        segment_index=int(b.segment_index[0]),
    )


def project_naive(polyline: Polyline, query) -> Projection:
    return project(polyline, None, query)
