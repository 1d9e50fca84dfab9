"""Metrics computed from a trace alone, so they can be recomputed from exported files."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np

from ..errors import InvalidInputError
from .runner import TraceLog, quantize
from .scenario import Scenario


@dataclass
class MetricsReport:
    name: str
    steps: int
    terminal_error: float
    settle_step: Optional[int]
    settle_time_s: Optional[float]
    post_capture_sd: float
    post_capture_max: float
    capture_rmse: Optional[float] = None
    path_rmse: Optional[float] = None
    waypoints_captured: int = 0
    waypoints_total: int = 0
    recovery_steps: Optional[int] = None
    constraint_violations: int = 0
    faults: int = 0
    period_s: Optional[float] = None
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return all(self.checks.values())

    def as_dict(self) -> dict:
        d = asdict(self)
        d["success"] = self.success
        return d


def settle_index(errors, mpe: float, window: int) -> Optional[int]:
    """First k with ``errors[k:k+window] < mpe`` for a full window."""
    below = np.asarray(errors, dtype=float) < mpe  # NaN compares False
    n = below.size
    run = 0
    for k in range(n - 1, -1, -1):
        run = run + 1 if below[k] else 0
        below[k] = run >= window
    idx = np.flatnonzero(below)
    return int(idx[0]) if idx.size else None


def estimate_period(signal, dt: float, min_lag: int = 2) -> Optional[float]:
    """Dominant period (s) of a multichannel signal via autocorrelation.

    Channels are linearly detrended and reduced to their first principal
    component. The autocorrelation at each lag is the correlation coefficient
    of the overlapping samples. After the first zero crossing, the first run
    of lags within 80 % of the highest correlation marks the period (multiples
    of the period score about as well). The peak is refined by a least-squares
    parabola over that run, since neighbouring lags differ by less than the
    estimation noise.
    """
    X = np.asarray(signal, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 4 * min_lag or not np.all(np.isfinite(X)):
        return None
    tt = np.arange(n)
    A = np.column_stack([tt, np.ones(n)])
    X = X - A @ np.linalg.lstsq(A, X, rcond=None)[0]
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    if s[0] <= 1e-12 * max(1.0, np.abs(X).max()):
        return None
    x = X @ Vt[0]
    max_lag = n // 2
    # correlation coefficient of the overlapping parts at each lag
    r = np.ones(max_lag)
    for lag in range(1, max_lag):
        a, b = x[:-lag], x[lag:]
        a, b = a - a.mean(), b - b.mean()
        den = np.sqrt((a @ a) * (b @ b))
        r[lag] = (a @ b) / den if den > 0 else 0.0
    crossings = np.flatnonzero(r < 0)
    if crossings.size == 0:
        return None
    lo = max(int(crossings[0]), min_lag)
    if lo + 1 >= max_lag:
        return None
    top = float(r[lo:].max())
    if top <= 0:
        return None
    above = np.flatnonzero(r[lo:] >= 0.8 * top) + lo
    start = int(above[0])
    end = start
    while end + 1 < max_lag and r[end + 1] >= 0.8 * top:
        end += 1
    i = start + int(np.argmax(r[start:end + 1]))
    half = max(1, (end - start) // 2)
    lags = np.arange(max(lo, i - half), min(max_lag, i + half + 1))
    if lags.size >= 3:
        c2, c1, _ = np.polyfit(lags - i, r[lags], 2)
        if c2 < 0:
            shift = -c1 / (2 * c2)
            if abs(shift) <= half:
                return float((i + shift) * dt)
    return float(i * dt)


def _seg_dist(p, a, b) -> float:
    ab = b - a
    L2 = float(ab @ ab)
    s = 0.0 if L2 == 0 else float(np.clip((p - a) @ ab / L2, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + s * ab)))


def _rms(v) -> Optional[float]:
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return None
    return float(np.sqrt(np.mean(v ** 2)))


def compute_metrics(trace: TraceLog, scenario: Scenario) -> MetricsReport:
    if len(trace) == 0:
        raise InvalidInputError("cannot compute metrics of an empty trace")
    crit = scenario.criteria
    dt = scenario.dt
    err = trace.errors()
    err = np.where(np.isnan(err), np.inf, err)
    n = err.size

    settle = settle_index(err, crit.mpe_px, crit.settle_window)
    if settle is not None:
        tail = err[settle:]
        finite = np.all(np.isfinite(tail))
        sd = float(np.std(tail)) if finite else math.inf
        mx = float(np.max(tail))
    else:
        sd = mx = math.inf

    # hard actuator box, compared at the logged precision
    lo, hi = scenario.controller.actuator_box(scenario.geometry)
    q = trace.columns([f"q_{i}" for i in range(8)])
    qlo = np.array([quantize(v) for v in lo])
    qhi = np.array([quantize(v) for v in hi])
    violations = int(np.sum(np.any((q < qlo) | (q > qhi), axis=1)))

    report = MetricsReport(
        name=trace.name, steps=n, terminal_error=float(err[-1]), settle_step=settle,
        settle_time_s=None if settle is None else settle * dt, post_capture_sd=sd, post_capture_max=mx,
        constraint_violations=violations, faults=int(np.sum(trace.column("fault"))),
    )

    target = scenario.target
    if target.kind == "waypoints":
        captured = trace.column("captured").astype(bool)
        report.waypoints_total = len(target.waypoints)
        report.waypoints_captured = int(captured.sum())
        report.capture_rmse = _rms(err[captured])
        wp = trace.column("waypoint")
        goals = trace.columns(["goal_u", "goal_v"])
        meas = trace.columns(["meas_u", "meas_v"])
        last_goal = {}
        dists = []
        for k in range(n):
            w = int(wp[k])
            last_goal[w] = goals[k]
            if w >= 1 and (w - 1) in last_goal:
                dists.append(_seg_dist(meas[k], last_goal[w - 1], goals[k]) if np.isfinite(err[k]) else math.inf)
        report.path_rmse = _rms(dists)

    active = np.flatnonzero(trace.column("disturbance_active"))
    if active.size:
        end = int(active[-1]) + 1
        after = np.flatnonzero(err[end:] < crit.mpe_px)
        report.recovery_steps = int(after[0]) if after.size else None

    if crit.period_s is not None and settle is not None:
        report.period_s = estimate_period(q[settle:], dt)

    checks = {"actuator_box": violations == 0}
    if crit.terminal_max_px is not None:
        checks["terminal_error"] = report.terminal_error < crit.terminal_max_px
    if target.kind != "waypoints":
        checks["settled"] = settle is not None and (crit.settle_max_step is None or settle <= crit.settle_max_step)
    if crit.sd_max_px is not None:
        checks["post_capture_sd"] = sd <= crit.sd_max_px
    if crit.max_error_px is not None:
        checks["post_capture_max"] = mx <= crit.max_error_px
    if target.kind == "waypoints":
        checks["all_waypoints"] = report.waypoints_captured == report.waypoints_total
        if crit.rmse_max_px is not None:
            checks["capture_rmse"] = report.capture_rmse is not None and report.capture_rmse <= crit.rmse_max_px
            checks["path_rmse"] = report.path_rmse is not None and report.path_rmse <= crit.rmse_max_px
    if crit.recovery_max_steps is not None:
        checks["recovery"] = report.recovery_steps is not None and report.recovery_steps <= crit.recovery_max_steps
    if crit.period_s is not None:
        tol = dt if crit.period_tol_s is None else crit.period_tol_s
        checks["period"] = report.period_s is not None and abs(report.period_s - crit.period_s) <= tol
    report.checks = checks
    return report
