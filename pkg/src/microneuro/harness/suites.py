"""Multi-run experiment suites built from a base scenario."""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from ..errors import ConfigError
from .metrics import MetricsReport
from .runner import TraceLog, run_scenario
from .scenario import Scenario, builtin_scenario, load_waypoints

RunResult = Tuple[Scenario, TraceLog, MetricsReport]


def static_scenarios(base: Optional[Scenario] = None) -> List[Scenario]:
    """One scenario per marker, placed at equal bearings on a circle in the target plane."""
    base = base or builtin_scenario("static6")
    s = base.suite
    markers = int(s.get("markers", 6))
    spacing = float(s.get("spacing_deg", 360.0 / markers))
    depth = float(s.get("depth", 20.0))
    radius_mm = float(s.get("radius_px", 200.0)) * depth / base.intrinsics.lambda_x
    out = []
    for i in range(markers):
        bearing = np.deg2rad(i * spacing)
        anchor = (radius_mm * np.cos(bearing), radius_mm * np.sin(bearing), depth)
        out.append(replace(base, name=f"{base.name}_{int(round(i * spacing)):03d}deg",
                           target=replace(base.target, kind="static", anchor=tuple(float(a) for a in anchor))))
    return out


def cair_scenarios(base: Optional[Scenario] = None) -> List[Scenario]:
    base = base or builtin_scenario("cair")
    letters = base.suite.get("letters", ["C", "A", "I", "R"])
    root = Path(base.source).parent if base.source else Path.cwd()
    wp_dir = root / base.suite.get("waypoints_dir", "../waypoints")
    out = []
    for letter in letters:
        path = wp_dir / f"{letter}.csv"
        if not path.exists():
            raise ConfigError([("suite.letters", f"missing waypoint file {path}")])
        pts = tuple(tuple(p) for p in load_waypoints(path))
        out.append(replace(base, name=f"{base.name}_{letter}", target=replace(base.target, waypoints=pts)))
    return out


def _run_all(scenarios, seed=None, dump_dir=None) -> List[RunResult]:
    results = []
    for sc in scenarios:
        if seed is not None:
            sc = sc.with_seed(seed)
        trace, report = run_scenario(sc, dump_dir=dump_dir)
        results.append((sc, trace, report))
    return results


def run_static_suite(base: Optional[Scenario] = None, seed=None, dump_dir=None) -> List[RunResult]:
    return _run_all(static_scenarios(base), seed, dump_dir)


def run_cair_suite(base: Optional[Scenario] = None, seed=None, dump_dir=None) -> List[RunResult]:
    return _run_all(cair_scenarios(base), seed, dump_dir)


def run_dynamic(base: Optional[Scenario] = None, seed=None, dump_dir=None) -> List[RunResult]:
    return _run_all([base or builtin_scenario("dynamic")], seed, dump_dir)


def run_biopsy(base: Optional[Scenario] = None, seed=None, dump_dir=None) -> List[RunResult]:
    return _run_all([base or builtin_scenario("biopsy")], seed, dump_dir)


def compare_estimator(base: Optional[Scenario] = None, seed=None) -> Tuple[List[RunResult], List[RunResult]]:
    """Static suite twice with identical seeds: online estimate vs model Jacobian only."""
    base = base or builtin_scenario("static6")
    online = run_static_suite(replace(base, controller=replace(base.controller, estimator="online")), seed)
    analytic_base = replace(base, name=f"{base.name}_analytic",
                            controller=replace(base.controller, estimator="analytic"))
    analytic = run_static_suite(analytic_base, seed)
    return online, analytic


def summarize(results: List[RunResult], dt: Optional[float] = None) -> dict:
    reps = [r for _, _, r in results]
    settle = [r.settle_time_s for r in reps if r.settle_time_s is not None]
    return {
        "runs": len(reps),
        "passed": sum(r.success for r in reps),
        "mean_terminal_error": float(np.mean([r.terminal_error for r in reps])),
        "mean_settle_time_s": float(np.mean(settle)) if settle else None,
    }


SUITES = {
    "static6": run_static_suite,
    "dynamic": run_dynamic,
    "cair": run_cair_suite,
    "biopsy": run_biopsy,
}
