import numpy as np
import pytest

from trajplan.benchmark import (CycleRecord, benchmark_options, histograms, replan_sequence,
                                summarize)
from trajplan.config import PlannerConfig
from trajplan.corpus import straight_road


def _rec(cycle, warm, its, cold=None, failed=False, wall=1.0):
    return CycleRecord("s", cycle, warm, its, 1, wall, "Optimal", failed, cold)


def test_summary_on_synthetic_records():
    recs = [_rec(0, False, 40), _rec(1, True, 10, cold=40), _rec(2, True, 30, cold=40),
            _rec(3, True, 5, cold=20, failed=True, wall=9.0)]
    s = summarize(recs)
    assert s["cycles"] == 4 and s["failures"] == 1 and s["failure_rate"] == 0.25
    assert s["warm_median_iterations"] == 10
    assert s["cold_median_iterations"] == 40
    assert s["warm_halved_fraction"] == pytest.approx(2 / 3)
    assert s["wall_ms"]["max"] == 9.0


def test_summary_of_nothing():
    s = summarize([])
    assert s["cycles"] == 0 and s["failure_rate"] == 0.0 and s["warm_halved_fraction"] is None


def test_histograms_count_every_record():
    recs = [_rec(i, i % 3 != 0, i, wall=0.5 * i) for i in range(30)]
    h = histograms(recs, bins=7)
    for metric, (edges, counts) in h.items():
        assert len(edges) == 8 and np.all(np.diff(edges) > 0)
        assert counts["warm"].sum() + counts["cold"].sum() == 30
        assert counts["cold"].sum() == 10


def test_benchmark_options_swap_cutoffs():
    opts = benchmark_options(PlannerConfig())
    assert opts.cutoff_ms is None and opts.cutoff_iterations == 300


def test_straight_road_never_fails():
    recs = replan_sequence(straight_road(length=300.0), 100)
    assert len(recs) == 100
    assert summarize(recs)["failure_rate"] == 0.0
    assert not recs[0].warm and all(r.warm for r in recs[1:])


def test_warm_cycles_are_cheaper():
    recs = replan_sequence(straight_road(v0=8.0, y0=0.5, v_target=8.0), 20, compare_cold=True)
    s = summarize(recs)
    assert s["failures"] == 0
    assert s["warm_median_iterations"] < s["cold_median_iterations"]
