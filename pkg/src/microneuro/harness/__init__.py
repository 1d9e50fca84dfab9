"""Scenario loading, closed-loop runs, metrics and the command-line entry point."""
from .metrics import MetricsReport, compute_metrics, estimate_period, settle_index
from .runner import TRACE_COLUMNS, TraceLog, export_trace, import_trace, run_scenario
from .scenario import Criteria, Scenario, builtin_scenario, load_scenario, scenario_from_dict
from .suites import (compare_estimator, run_biopsy, run_cair_suite, run_dynamic, run_static_suite,
                     summarize)

__all__ = [
    "Criteria", "MetricsReport", "Scenario", "TRACE_COLUMNS", "TraceLog", "builtin_scenario",
    "compare_estimator", "compute_metrics", "estimate_period", "export_trace", "import_trace",
    "load_scenario", "run_biopsy", "run_cair_suite", "run_dynamic", "run_scenario", "run_static_suite",
    "scenario_from_dict", "settle_index", "summarize",
]
