"""Closed-loop execution and trace I/O."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .. import estimator, kinematics
from ..errors import InvalidInputError
from ..mpc import VisualMpcController
from ..plant import OK, Plant, target_position
from .scenario import Scenario

TRACE_COLUMNS = (
    ["k", "t", "meas_u", "meas_v", "goal_u", "goal_v", "internal_u", "internal_v", "ref_u", "ref_v",
     "e_u", "e_v", "omega"]
    + [f"u_{i}" for i in range(8)]
    + [f"q_{i}" for i in range(8)]
    + ["P_x", "P_y", "P_z", "qp_status", "qp_objective", "qp_kkt", "qp_iterations", "slack",
       "disturbance_active", "fault", "reset", "visible", "waypoint", "dwell", "captured"]
)
STRING_COLUMNS = {"qp_status"}
INT_COLUMNS = {"k", "qp_iterations", "disturbance_active", "fault", "reset", "visible", "waypoint",
               "dwell", "captured"}
FLOAT_FORMAT = "%.9g"


def quantize(x: float) -> float:
    """Round to the printed precision so exported traces reload bit-identically."""
    return float(FLOAT_FORMAT % x)


@dataclass
class TraceLog:
    name: str = ""
    records: List[Dict[str, object]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, rec: Dict[str, object]) -> None:
        if self.records and rec["k"] <= self.records[-1]["k"]:
            raise InvalidInputError("trace steps must increase")
        row = {}
        for col in TRACE_COLUMNS:
            v = rec[col]
            if col in STRING_COLUMNS:
                row[col] = str(v)
            elif col in INT_COLUMNS:
                row[col] = int(v)
            else:
                row[col] = quantize(float(v))
        self.records.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    def columns(self, names) -> np.ndarray:
        return np.column_stack([self.column(n) for n in names])

    def errors(self) -> np.ndarray:
        """Per-step pixel error; NaN where the target was not visible."""
        d = self.columns(["meas_u", "meas_v"]) - self.columns(["goal_u", "goal_v"])
        return np.hypot(d[:, 0], d[:, 1])


# ----------------------------------------------------------------- file I/O

def export_trace(trace: TraceLog, path, fmt: str = "csv") -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(TRACE_COLUMNS)
                for r in trace.records:
                    w.writerow([_fmt_cell(c, r[c]) for c in TRACE_COLUMNS])
        elif fmt == "json":
            rows = [{c: (None if isinstance(r[c], float) and math.isnan(r[c]) else r[c]) for c in TRACE_COLUMNS}
                    for r in trace.records]
            path.write_text(json.dumps({"name": trace.name, "records": rows}, indent=1) + "\n")
        else:
            raise InvalidInputError(f"unknown trace format {fmt!r}")
    except OSError as exc:
        raise OSError(f"writing trace to {path}: {exc}") from exc
    return path


def _fmt_cell(col, v):
    if col in STRING_COLUMNS or col in INT_COLUMNS:
        return str(v)
    return FLOAT_FORMAT % v


def import_trace(path) -> TraceLog:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"reading trace from {path}: {exc}") from exc
    if path.suffix == ".json":
        blob = json.loads(text)
        trace = TraceLog(name=blob.get("name", path.stem))
        for r in blob["records"]:
            trace.append({c: (math.nan if r[c] is None else r[c]) for c in TRACE_COLUMNS})
        return trace
    rows = list(csv.reader(text.splitlines()))
    if not rows or rows[0] != TRACE_COLUMNS:
        raise InvalidInputError(f"{path}: unexpected trace header")
    trace = TraceLog(name=path.stem)
    for row in rows[1:]:
        rec = {}
        for col, cell in zip(TRACE_COLUMNS, row):
            rec[col] = cell if col in STRING_COLUMNS else (int(cell) if col in INT_COLUMNS else float(cell))
        trace.append(rec)
    return trace


# ------------------------------------------------------------ closed loop

class WaypointTracker:
    """Advance through pixel goals once each is held within tolerance for ``dwell`` steps."""

    def __init__(self, waypoints, tol: float, dwell: int):
        self.waypoints = [np.asarray(w, dtype=float) for w in waypoints]
        self.tol = tol
        self.dwell = dwell
        self.index = 0
        self.count = 0
        self.captured = 0

    @property
    def done(self) -> bool:
        return self.captured >= len(self.waypoints)

    @property
    def goal(self) -> np.ndarray:
        return self.waypoints[min(self.index, len(self.waypoints) - 1)]

    def update(self, error: float) -> bool:
        """Feed this step's error; returns True when the current waypoint is captured."""
        if self.done:
            return False
        self.count = self.count + 1 if error < self.tol else 0
        if self.count >= self.dwell:
            self.captured += 1
            self.index += 1
            self.count = 0
            return True
        return False


def world_anchor(scenario: Scenario) -> np.ndarray:
    """Target anchors are given relative to the nominal straight start camera point."""
    q0 = scenario.start_actuators()
    c0 = kinematics.camera_position(kinematics.config_array(q0, scenario.geometry), scenario.geometry)
    return c0 + np.asarray(scenario.target.anchor, dtype=float)


def run_scenario(scenario: Scenario, dump_dir=None, on_step=None):
    """Run the closed loop. Returns ``(TraceLog, MetricsReport)``."""
    from .metrics import compute_metrics

    geom, intr, cfg = scenario.geometry, scenario.intrinsics, scenario.controller
    q0 = scenario.start_actuators()
    plant = Plant(geom, scenario.plant, q0, intr)

    if cfg.estimator == "online":
        J0 = estimator.initialize_offline(plant.probe, q0, scenario.probe_step)
    else:
        J0 = estimator.JacobianEstimate(J_hat=kinematics.analytic_jacobian(q0, geom))
    ctl = VisualMpcController(geom, intr, cfg, q0, J0, dump_dir=dump_dir, name=scenario.name)

    target = replace(scenario.target, anchor=tuple(world_anchor(scenario)))
    tracker = None
    if target.kind == "waypoints":
        tracker = WaypointTracker(target.waypoints, target.capture_tol_px, target.dwell_steps)
    dist = scenario.disturbance
    trace = TraceLog(name=scenario.name)
    nan2 = (math.nan, math.nan)

    for k in range(scenario.max_steps):
        t = k * scenario.dt
        goal = tracker.goal if tracker is not None else np.asarray(target.goal, dtype=float)
        waypoint = tracker.index if tracker is not None else 0
        extra_sd = dist.extra_pixel_noise_sd if (dist is not None and dist.active(k)) else 0.0
        obs = plant.observe_feature(target_position(target, t), extra_sd)
        u, diag = ctl.step(obs.feature, goal)
        sig = diag.signals
        if sig is not None and scenario.enforce_identity:
            scale = max(1.0, float(np.max(np.abs(np.concatenate([sig.measured, sig.goal, sig.internal])))))
            gap = sig.identity_gap()
            if gap > 8 * np.finfo(float).eps * scale:
                raise AssertionError(f"IMC reference identity violated at step {k}: gap {gap:.3e}")

        err = math.inf if obs.feature is None else float(np.linalg.norm(obs.feature - goal))
        captured = tracker.update(err) if tracker is not None else False
        dwell = tracker.count if tracker is not None else 0

        plant.apply_control(u, k, dist)
        P = plant.camera_position()
        rec = {
            "k": k, "t": t,
            "meas_u": obs.feature[0] if obs.status == OK else math.nan,
            "meas_v": obs.feature[1] if obs.status == OK else math.nan,
            "goal_u": goal[0], "goal_v": goal[1],
            "internal_u": sig.internal[0] if sig else nan2[0], "internal_v": sig.internal[1] if sig else nan2[1],
            "ref_u": sig.reference[0] if sig else nan2[0], "ref_v": sig.reference[1] if sig else nan2[1],
            "e_u": sig.predictive_error[0] if sig else nan2[0], "e_v": sig.predictive_error[1] if sig else nan2[1],
            "omega": diag.omega,
            "P_x": P[0], "P_y": P[1], "P_z": P[2],
            "qp_status": diag.qp_status, "qp_objective": diag.objective, "qp_kkt": diag.kkt_residual,
            "qp_iterations": diag.qp_iterations, "slack": diag.slack,
            "disturbance_active": int(dist is not None and dist.active(k)),
            "fault": int(diag.fault), "reset": int(diag.reset), "visible": int(obs.status == OK),
            "waypoint": waypoint, "dwell": dwell, "captured": int(captured),
        }
        for i in range(8):
            rec[f"u_{i}"] = u[i]
            rec[f"q_{i}"] = ctl.state.q[i]
        trace.append(rec)
        if on_step is not None:
            on_step(k, rec)
        if scenario.stop_on_success and tracker is not None and tracker.done:
            break

    return trace, compute_metrics(trace, scenario)
