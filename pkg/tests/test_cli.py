import json
import shutil
import subprocess
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from trajplan import cli
from trajplan.config import ENV_VAR
from trajplan.files import load_scenario, read_table
from trajplan.nlp import TrajectoryNlp
from trajplan.plots import plan_figure, profile_limits

SCENARIOS = cli.bundled_scenario_dir()
STRAIGHT = SCENARIOS / "straight.yaml"
SVG = "{http://www.w3.org/2000/svg}"


@pytest.fixture(autouse=True)
def _no_env_config(monkeypatch):
    monkeypatch.delenv(ENV_VAR, raising=False)


@pytest.fixture(scope="module")
def straight_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("plan")
    code = cli.main(["plan", str(STRAIGHT), "-o", str(out)])
    return code, out


def test_plan_writes_outputs(straight_run):
    code, out = straight_run
    assert code == cli.EXIT_OK
    sc = load_scenario(STRAIGHT)
    traj = read_table(out / "trajectory.csv")
    assert traj.n_knots == sc.n_knots
    telemetry = json.loads((out / "telemetry.json").read_text())
    assert telemetry["status"] == "Optimal" and telemetry["success"]
    assert telemetry["config"]["benchmark"]["cutoff_iterations"] == 300
    assert telemetry["scenario_parameters"]["v_target"] == sc.v_target
    assert json.loads((out / "validation.json").read_text())["passed"]
    assert (out / "warm_start.npz").exists() and (out / "plan.svg").exists()


def test_plan_svg_has_limit_lines(straight_run):
    _, out = straight_run
    root = ET.parse(out / "plan.svg").getroot()
    ids = {el.get("id") for el in root.iter(f"{SVG}g")}
    for key, bounds in profile_limits(load_scenario(STRAIGHT)).items():
        for k, b in enumerate(bounds or ()):
            if b is not None:
                assert f"limit:{key}:{k}" in ids


def test_warm_from_previous_run(straight_run, tmp_path):
    _, first = straight_run
    code = cli.main(["plan", str(STRAIGHT), "-o", str(tmp_path), "--warm-from", str(first),
                     "--no-plot"])
    assert code == cli.EXIT_OK
    assert json.loads((tmp_path / "telemetry.json").read_text())["warm_started"]


def test_bad_warm_start_is_input_error(tmp_path):
    (tmp_path / "warm_start.npz").write_bytes(b"not an archive")
    code = cli.main(["plan", str(STRAIGHT), "-o", str(tmp_path / "o"), "--warm-from",
                     str(tmp_path)])
    assert code == cli.EXIT_INPUT


def test_missing_field_is_input_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("\n".join(l for l in STRAIGHT.read_text().splitlines()
                             if not l.startswith("v_target")))
    assert cli.main(["plan", str(bad), "-o", str(tmp_path / "o")]) == cli.EXIT_INPUT
    assert "field 'v_target'" in capsys.readouterr().err


def test_failed_plan_exits_one(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("solve: {cutoff_iterations: 1, cutoff_ms: null}\n")
    code = cli.main(["--config", str(cfg), "plan", str(SCENARIOS / "obstacle.yaml"),
                     "-o", str(tmp_path / "o"), "--no-plot"])
    assert code == cli.EXIT_FAIL
    telemetry = json.loads((tmp_path / "o" / "telemetry.json").read_text())
    assert telemetry["status"] == "CutoffTimeReached" and not telemetry["success"]
    assert not (tmp_path / "o" / "warm_start.npz").exists()


def test_env_config_is_echoed(monkeypatch, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("gains: {k_v: 0.5}\nweights: {w_lat: 6.0}\n")
    monkeypatch.setenv(ENV_VAR, str(cfg))
    assert cli.main(["plan", str(STRAIGHT), "-o", str(tmp_path / "o"), "--no-plot"]) == 0
    echoed = json.loads((tmp_path / "o" / "telemetry.json").read_text())["config"]
    assert echoed["gains"]["k_v"] == 0.5 and echoed["weights"]["w_lat"] == 6.0


def test_plot_is_deterministic(straight_run, tmp_path):
    _, out = straight_run
    paths = [tmp_path / "a.svg", tmp_path / "b.svg"]
    for p in paths:
        assert cli.main(["plot", str(out / "trajectory.csv"), str(STRAIGHT), "-o", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    ET.parse(paths[0])


def test_plot_rejects_wrong_length(tmp_path, straight_run):
    _, out = straight_run
    short = tmp_path / "short.csv"
    short.write_text("\n".join((out / "trajectory.csv").read_text().splitlines()[:10]) + "\n")
    assert cli.main(["plot", str(short), str(STRAIGHT), "-o", str(tmp_path / "p.svg")]) == 2


def test_limit_lines_sit_at_bounds(straight_run):
    _, out = straight_run
    sc = load_scenario(STRAIGHT)
    fig = plan_figure(sc, read_table(out / "trajectory.csv"))
    limits = profile_limits(sc)
    found = 0
    for ax in fig.axes:
        for line in ax.lines:
            gid = line.get_gid()
            if gid and gid.startswith("limit:"):
                _, key, idx = gid.split(":")
                np.testing.assert_array_equal(line.get_ydata(), [limits[key][int(idx)]] * 2)
                found += 1
    assert found == sum(b is not None for v in limits.values() if v for b in v)


def test_gradcheck_passes(capsys):
    assert cli.main(["gradcheck", str(SCENARIOS / "obstacle.yaml"), "--points", "2"]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_gradcheck_flags_broken_gradient(monkeypatch, capsys):
    original = TrajectoryNlp.gradient

    def broken(self, z):
        g = original(self, z).copy()
        g[9] += 1e-2
        return g

    monkeypatch.setattr(TrajectoryNlp, "gradient", broken)
    assert cli.main(["gradcheck", str(SCENARIOS / "obstacle.yaml"), "--points", "1"]) == 1
    out = capsys.readouterr().out
    assert "objective row 0, column 9" in out and "(y of block 1)" in out


def test_benchmark_writes_reports(tmp_path):
    src = tmp_path / "scen"
    src.mkdir()
    shutil.copy(STRAIGHT, src)
    out = tmp_path / "bench"
    assert cli.main(["benchmark", str(src), "--cycles", "2", "-o", str(out)]) == 0
    rows = (out / "cycles.csv").read_text().strip().splitlines()
    assert len(rows) == 3
    assert (out / "histogram.csv").read_text().startswith("metric,series,bin_low")
    summary = json.loads((out / "summary.json").read_text())
    assert summary["cycles"] == 2 and summary["failures"] == 0
    assert "straight" in summary["per_scenario"]
    ET.parse(out / "histogram.svg")


def test_benchmark_empty_dir(tmp_path):
    assert cli.main(["benchmark", str(tmp_path), "-o", str(tmp_path / "o")]) == 2


def test_corpus_round_trips(tmp_path):
    assert cli.main(["corpus", "-o", str(tmp_path)]) == 0
    written = sorted(p.name for p in tmp_path.glob("*.yaml"))
    assert written == sorted(p.name for p in SCENARIOS.glob("*.yaml"))
    for name in written:
        assert (tmp_path / name).read_text() == (SCENARIOS / name).read_text()


def test_console_script(tmp_path):
    exe = shutil.which("trajplan")
    if exe is None:
        pytest.skip("console script not installed")
    proc = subprocess.run([exe, "plan", str(STRAIGHT), "-o", str(tmp_path), "--no-plot"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert "straight: Optimal" in proc.stdout
