"""Receding-horizon replanning runs and their summary statistics."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .config import PlannerConfig
from .kinematics import VehicleState
from .planner import WarmStartCache, plan
from .scenario import Scenario
from .solver import SolveOptions


@dataclass
class CycleRecord:
    scenario: str
    cycle: int
    warm: bool
    iterations: int
    outer_iterations: int
    wall_ms: float
    status: str
    failed: bool
    cold_iterations: int | None = None  # same cycle re-solved from scratch, when requested

    def to_dict(self) -> dict:
        return asdict(self)


def benchmark_options(config: PlannerConfig) -> SolveOptions:
    """Solver options with the deterministic iteration cutoff replacing the wall-clock one."""
    return replace(config.solve, cutoff_ms=None,
                   cutoff_iterations=config.benchmark.cutoff_iterations)


def replan_sequence(scenario: Scenario, cycles: int, config: PlannerConfig | None = None,
                    compare_cold: bool = False, smooth: bool = True) -> list[CycleRecord]:
    """Replan ``cycles`` times, moving the start along the previous plan each cycle.

    The first cycle is necessarily cold; later cycles reuse the cache. With
    ``compare_cold`` every cycle is also solved without the cache so the two
    iteration counts can be compared on identical problems.
    """
    cfg = config or PlannerConfig()
    opts = benchmark_options(cfg)
    shift = cfg.benchmark.shift_knots
    cache = WarmStartCache()
    s0 = scenario.s0
    records = []
    for cycle in range(cycles):
        sc = scenario.with_start(s0)
        t0 = time.perf_counter()
        out = plan(sc, cache, smooth=smooth, config=cfg, options=opts)
        wall = (time.perf_counter() - t0) * 1e3
        cold_its = None
        if compare_cold:
            cold_its = plan(sc, None, smooth=smooth, config=cfg, options=opts).result.inner_iterations
        records.append(CycleRecord(scenario.name, cycle, out.warm_started,
                                   out.result.inner_iterations, out.result.outer_iterations,
                                   wall, out.result.status.value, not out.ok, cold_its))
        nxt = out.trajectory.states[min(shift, out.trajectory.n_knots - 1)]
        s0 = VehicleState(*map(float, nxt))
    return records


def run_corpus(scenarios, cycles: int, config: PlannerConfig | None = None,
               compare_cold: bool = False) -> list[CycleRecord]:
    records = []
    for sc in scenarios:
        records += replan_sequence(sc, cycles, config, compare_cold)
    return records


def summarize(records: list[CycleRecord]) -> dict:
    def stats(values):
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            return {"p50": None, "p95": None, "max": None}
        return {"p50": float(np.percentile(v, 50)), "p95": float(np.percentile(v, 95)),
                "max": float(v.max())}

    warm = [r.iterations for r in records if r.warm]
    cold = [r.iterations for r in records if not r.warm]
    cold += [r.cold_iterations for r in records if r.cold_iterations is not None]
    paired = [r for r in records if r.warm and r.cold_iterations is not None]
    halved = [r.iterations <= 0.5 * r.cold_iterations for r in paired]
    failures = sum(r.failed for r in records)
    return {
        "cycles": len(records),
        "failures": failures,
        "failure_rate": failures / len(records) if records else 0.0,
        "wall_ms": stats([r.wall_ms for r in records]),
        "iterations": stats([r.iterations for r in records]),
        "warm_median_iterations": float(np.median(warm)) if warm else None,
        "cold_median_iterations": float(np.median(cold)) if cold else None,
        "warm_halved_fraction": float(np.mean(halved)) if halved else None,
    }


def histograms(records: list[CycleRecord], bins: int = 30) -> dict:
    """Shared-edge histograms of wall time and iterations, split into warm and cold cycles."""
    out = {}
    for metric in ("wall_ms", "iterations"):
        values = np.array([getattr(r, metric) for r in records], dtype=float)
        if metric == "iterations":
            top = max(1.0, float(values.max(initial=0.0)))
            edges = np.linspace(0.0, np.ceil(top / bins) * bins + 1.0, bins + 1)
        else:
            edges = np.histogram_bin_edges(values if values.size else [0.0, 1.0], bins=bins)
        counts = {}
        for label, flag in (("warm", True), ("cold", False)):
            sel = np.array([getattr(r, metric) for r in records if r.warm == flag], dtype=float)
            counts[label] = np.histogram(sel, bins=edges)[0]
        out[metric] = (edges, counts)
    return out
