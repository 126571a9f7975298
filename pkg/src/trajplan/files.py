"""On-disk formats: scenario YAML, trajectory tables and warm-start archives.

Scenario parse errors carry the dotted field path and the 1-based line of
the offending node so a user can jump straight to it.
"""

from __future__ import annotations

import dataclasses
import io
import math
from pathlib import Path

import numpy as np
import yaml

from .corridor import DrivableCorridor
from .kinematics import KinematicBounds, VehicleGeometry, VehicleState
from .planner import Trajectory, WarmStartCache, fingerprint
from .scenario import ObjectiveWeights, Scenario
from .solver import WarmStart

TABLE_COLUMNS = ("t", "x", "y", "theta", "kappa", "v", "a", "j", "kappa_dot",
                 "centri_acc", "centri_jerk")


class ScenarioFileError(ValueError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field, self.line = field, line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


# -- YAML with line numbers ---------------------------------------------------------


def _record_lines(node, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            _record_lines(value_node, path + (key_node.value,), lines)
    elif isinstance(node, yaml.SequenceNode):
        for i, value_node in enumerate(node.value):
            _record_lines(value_node, path + (i,), lines)


class _Doc:
    """Parsed document plus a path → line lookup."""

    def __init__(self, text: str):
        try:
            root = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ScenarioFileError(f"not valid YAML: {getattr(exc, 'problem', exc)}",
                                    line=mark.line + 1 if mark else None) from None
        self.lines: dict = {}
        self.data = None
        if root is not None:
            _record_lines(root, (), self.lines)
            self.data = yaml.SafeLoader("").construct_document(root)
        if not isinstance(self.data, dict):
            raise ScenarioFileError("scenario file must be a mapping", line=1)

    def line(self, path) -> int | None:
        path = tuple(path)
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path)

    def error(self, path, message):
        return ScenarioFileError(message, ".".join(map(str, path)) or None, self.line(path))

    def get(self, path, required=True, default=None):
        node = self.data
        for i, key in enumerate(path):
            if not isinstance(node, dict):
                raise self.error(path[:i], "expected a mapping")
            if key not in node:
                if required:
                    raise self.error(path, "missing required field")
                return default
            node = node[key]
        return node

    def number(self, path, required=True, default=None) -> float:
        value = self.get(path, required, default)
        if value is default and not required:
            return default
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(path, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise self.error(path, "must be finite")
        return float(value)

    def fields(self, path, cls, skip=()) -> dict:
        """Numeric fields of an optional mapping, rejecting keys ``cls`` does not take."""
        raw = self.get(path, required=False, default={})
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise self.error(path, "expected a mapping")
        known = {f.name for f in dataclasses.fields(cls) if f.init} - set(skip)
        for key in raw:
            if key not in known:
                raise self.error(path + (key,), f"unknown field (expected one of {sorted(known)})")
        return {k: self.number(path + (k,)) for k in raw}

    def points(self, path) -> np.ndarray:
        raw = self.get(path)
        if not isinstance(raw, list) or len(raw) < 2:
            raise self.error(path, "expected a list of at least two [x, y] points")
        for i, p in enumerate(raw):
            if (not isinstance(p, list) or len(p) != 2
                    or any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in p)):
                raise self.error(path + (i,), f"expected [x, y], got {p!r}")
        arr = np.asarray(raw, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise self.error(path, "coordinates must be finite")
        return arr


def _build(doc: _Doc, path, cls, skip=(), base=None, **extra):
    try:
        values = doc.fields(path, cls, skip)
        if base is not None:
            return dataclasses.replace(base, **values)
        return cls(**values, **extra)
    except ScenarioFileError:
        raise
    except (TypeError, ValueError) as exc:
        raise doc.error(path, str(exc)) from None


def parse_scenario(text: str, name: str = "", weights: ObjectiveWeights | None = None) -> Scenario:
    """Build a scenario; ``weights`` supplies defaults for fields the file leaves out."""
    doc = _Doc(text)
    allowed = {"name", "initial_state", "vehicle", "bounds", "corridor", "v_target", "t_max",
               "dt", "weights"}
    for key in doc.data:
        if key not in allowed:
            raise doc.error((key,), f"unknown field (expected one of {sorted(allowed)})")
    if doc.get(("initial_state",)) in (None, {}):
        raise doc.error(("initial_state",), "missing required field")
    s0 = _build(doc, ("initial_state",), VehicleState)
    geometry = _build(doc, ("vehicle",), VehicleGeometry, skip=("circle_centers",))
    bounds = _build(doc, ("bounds",), KinematicBounds, skip=("axis_length",),
                    axis_length=geometry.axis_length)
    weights = _build(doc, ("weights",), ObjectiveWeights, base=weights)
    corridor_raw = doc.get(("corridor",))
    if not isinstance(corridor_raw, dict):
        raise doc.error(("corridor",), "expected a mapping with left, right and reference")
    for key in corridor_raw:
        if key not in ("left", "right", "reference"):
            raise doc.error(("corridor", key), "unknown field (expected left, right, reference)")
    try:
        corridor = DrivableCorridor.from_points(*(doc.points(("corridor", k))
                                                  for k in ("left", "right", "reference")))
    except ValueError as exc:
        if isinstance(exc, ScenarioFileError):
            raise
        raise doc.error(("corridor",), str(exc)) from None
    label = doc.get(("name",), required=False, default=name)
    v_target, t_max = doc.number(("v_target",)), doc.number(("t_max",))
    dt = doc.number(("dt",), required=False, default=0.1)
    try:
        return Scenario(s0, corridor, v_target, t_max, dt, geometry, bounds, weights, str(label))
    except ValueError as exc:
        text = str(exc)
        field = next((f for f in ("v_target", "t_max", "dt") if f in text), "t_max")
        raise doc.error((field,), text) from None


def load_scenario(path, weights: ObjectiveWeights | None = None) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioFileError(f"cannot read {path}: {exc.strerror or exc}") from None
    return parse_scenario(text, name=path.stem, weights=weights)


def scenario_to_dict(sc: Scenario) -> dict:
    def floats(obj, skip=()):
        return {f.name: float(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if f.init and f.name not in skip and getattr(obj, f.name) is not None}

    return {
        "name": sc.name,
        "v_target": float(sc.v_target),
        "t_max": float(sc.t_max),
        "dt": float(sc.dt),
        "initial_state": floats(sc.s0),
        "vehicle": floats(sc.geometry, skip=("circle_centers",)),
        "bounds": floats(sc.bounds, skip=("axis_length",)),
        "weights": floats(sc.weights),
        "corridor": {k: getattr(sc.corridor, k).points.tolist()
                     for k in ("left", "right", "reference")},
    }


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None)


# -- trajectory table -----------------------------------------------------------------


def trajectory_table(traj: Trajectory) -> np.ndarray:
    acc, jerk = traj.centripetal()
    return np.column_stack([traj.times, traj.states, traj.knot_controls(), acc, jerk])


def format_table(traj: Trajectory) -> str:
    buf = io.StringIO()
    np.savetxt(buf, trajectory_table(traj), fmt="%.17g", delimiter=",",
               header=",".join(TABLE_COLUMNS), comments="")
    return buf.getvalue()


def read_table(path) -> Trajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(TABLE_COLUMNS):
        raise ValueError(f"{path}: expected {len(TABLE_COLUMNS)} columns, found {data.shape[1]}")
    return Trajectory(data[:, 0], data[:, 1:7], data[1:, 7:9])


# -- warm start archive ------------------------------------------------------------------


def save_warm_start(path, scenario: Scenario, traj: Trajectory, warm: WarmStart) -> None:
    np.savez(path, fingerprint=np.array(fingerprint(scenario)), times=traj.times,
             states=traj.states, controls=traj.controls, primal=warm.primal,
             eq=warm.eq_multipliers, ineq=warm.ineq_multipliers, penalty=warm.penalty)


def load_warm_cache(path) -> WarmStartCache:
    path = Path(path)
    if path.is_dir():
        path = path / "warm_start.npz"
    with np.load(path) as data:
        traj = Trajectory(data["times"], data["states"], data["controls"])
        warm = WarmStart(data["primal"], data["eq"], data["ineq"], float(data["penalty"]))
        return WarmStartCache(str(data["fingerprint"]), traj, warm)
