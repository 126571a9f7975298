import textwrap
from dataclasses import replace

import numpy as np
import pytest

from trajplan.corpus import obstacle_road, straight_road
from trajplan.files import (ScenarioFileError, dump_scenario, format_table, load_scenario,
                            load_warm_cache, parse_scenario, read_table, save_warm_start)
from trajplan.planner import WarmStartCache, fingerprint, initial_guess, validate
from trajplan.scenario import ObjectiveWeights
from trajplan.solver import WarmStart

MINIMAL = textwrap.dedent("""\
    v_target: 8.0
    t_max: 2.0
    initial_state: {x: 0.0, y: 0.0, theta: 0.0, kappa: 0.0, v: 8.0, a: 0.0}
    corridor:
      left: [[-5, 3], [60, 3]]
      right: [[-5, -3], [60, -3]]
      reference: [[-5, 0], [60, 0]]
    """)


def test_yaml_round_trip_preserves_scenario():
    sc = obstacle_road()
    back = parse_scenario(dump_scenario(sc))
    assert back.name == sc.name
    assert back.s0 == sc.s0 and back.bounds == sc.bounds and back.geometry == sc.geometry
    assert back.weights == sc.weights
    for key in ("left", "right", "reference"):
        np.testing.assert_array_equal(getattr(back.corridor, key).points,
                                      getattr(sc.corridor, key).points)
    assert fingerprint(back) == fingerprint(sc)


def test_minimal_file_gets_defaults():
    sc = parse_scenario(MINIMAL, name="mini")
    assert sc.name == "mini"
    assert sc.dt == 0.1 and sc.n_knots == 21
    assert sc.weights == ObjectiveWeights()


def test_default_weights_fill_only_missing_fields():
    base = ObjectiveWeights(w_lat=9.0, w_v=0.7)
    sc = parse_scenario(MINIMAL + "weights: {w_v: 0.3}\n", weights=base)
    assert sc.weights.w_lat == 9.0
    assert sc.weights.w_v == 0.3


@pytest.mark.parametrize("text, field, line", [
    (MINIMAL.replace("v_target: 8.0\n", ""), "v_target", 1),
    (MINIMAL + "speed: 3\n", "speed", 8),
    (MINIMAL.replace("[60, 3]", "[60]"), "corridor.left.1", 5),
    (MINIMAL.replace("kappa: 0.0", "kappa: zero"), "initial_state.kappa", 3),
    (MINIMAL + "bounds: {a_max: 2.0, jerk: 1}\n", "bounds.jerk", 8),
    (MINIMAL.replace("t_max: 2.0", "t_max: -1.0"), "t_max", 2),
])
def test_errors_name_field_and_line(text, field, line):
    with pytest.raises(ScenarioFileError) as info:
        parse_scenario(text)
    assert info.value.field == field
    assert info.value.line == line
    assert f"field '{field}'" in str(info.value) and f"line {line}" in str(info.value)


def test_missing_v_target_message():
    with pytest.raises(ScenarioFileError, match=r"field 'v_target', line 1"):
        parse_scenario(MINIMAL.replace("v_target: 8.0\n", ""))


@pytest.mark.parametrize("text", ["- 1\n- 2\n", "", "a: [1, 2\n"])
def test_non_mapping_or_broken_yaml(text):
    with pytest.raises(ScenarioFileError):
        parse_scenario(text)


def test_unreadable_file(tmp_path):
    with pytest.raises(ScenarioFileError, match="cannot read"):
        load_scenario(tmp_path / "absent.yaml")


def test_load_uses_file_stem_as_fallback_name(tmp_path):
    path = tmp_path / "my_road.yaml"
    path.write_text(MINIMAL)
    assert load_scenario(path).name == "my_road"


def test_table_round_trip_is_exact(tmp_path):
    sc = straight_road(v0=8.0, y0=0.4)
    traj = initial_guess(sc)
    path = tmp_path / "t.csv"
    path.write_text(format_table(traj))
    back = read_table(path)
    np.testing.assert_array_equal(back.times, traj.times)
    np.testing.assert_array_equal(back.states, traj.states)
    np.testing.assert_array_equal(back.controls, traj.controls)
    assert validate(back, sc).to_dict() == validate(traj, sc).to_dict()


def test_table_header_and_shape(tmp_path):
    sc = straight_road()
    text = format_table(initial_guess(sc))
    lines = text.strip().splitlines()
    assert lines[0].split(",")[:3] == ["t", "x", "y"]
    assert len(lines) == 1 + sc.n_knots


def test_warm_archive_round_trip(tmp_path):
    sc = straight_road()
    traj = initial_guess(sc)
    z = traj.to_vector()
    m = sc.n_knots - 1
    warm = WarmStart(z, np.arange(6.0 * m), np.linspace(0, 1, 10 * m), 123.0)
    save_warm_start(tmp_path / "warm_start.npz", sc, traj, warm)
    cache = load_warm_cache(tmp_path)
    assert isinstance(cache, WarmStartCache)
    assert cache.fingerprint == fingerprint(sc)
    np.testing.assert_array_equal(cache.warm.primal, z)
    np.testing.assert_array_equal(cache.warm.ineq_multipliers, warm.ineq_multipliers)
    assert cache.warm.penalty == 123.0
    assert cache.lookup(sc) is not None
    other = replace(sc, t_max=sc.t_max + 1.0)
    assert cache.lookup(other) is None
