"""Scenario files: YAML in, validated dataclasses out.

Every problem found while loading is collected with its dotted field path
and raised together as a :class:`ConfigError`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

from ..camera import CameraIntrinsics
from ..errors import ConfigError
from ..kinematics import RobotGeometry
from ..mpc import MpcConfig
from ..plant import DisturbanceProfile, PlantConfig, TargetProfile


@dataclass(frozen=True)
class Criteria:
    """Pass/fail thresholds. ``None`` disables a check."""

    mpe_px: float = 30.0
    settle_window: int = 10
    terminal_max_px: Optional[float] = None
    settle_max_step: Optional[int] = None
    sd_max_px: Optional[float] = None
    max_error_px: Optional[float] = None
    rmse_max_px: Optional[float] = None
    recovery_max_steps: Optional[int] = None
    period_s: Optional[float] = None
    period_tol_s: Optional[float] = None  # default: one tick


@dataclass(frozen=True)
class Scenario:
    name: str
    plant: PlantConfig = PlantConfig()
    controller: MpcConfig = MpcConfig()
    intrinsics: CameraIntrinsics = CameraIntrinsics()
    geometry: RobotGeometry = RobotGeometry()
    target: TargetProfile = TargetProfile()
    disturbance: Optional[DisturbanceProfile] = None
    criteria: Criteria = Criteria()
    max_steps: int = 200
    dt: float = 0.1  # s per control tick
    start_z_b: float = 10.0  # mm
    start_z_e: float = 0.0  # mm
    probe_step: float = 0.1  # mm
    stop_on_success: bool = False
    enforce_identity: bool = True
    suite: Dict[str, Any] = field(default_factory=dict)
    source: Optional[str] = None

    @property
    def seed(self) -> int:
        return self.plant.rng_seed

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, plant=replace(self.plant, rng_seed=int(seed)))

    def start_actuators(self) -> np.ndarray:
        return self.geometry.straight_actuators(self.start_z_b, self.start_z_e)


_SECTIONS = {
    "plant": PlantConfig,
    "controller": MpcConfig,
    "intrinsics": CameraIntrinsics,
    "geometry": RobotGeometry,
    "target": TargetProfile,
    "disturbance": DisturbanceProfile,
    "criteria": Criteria,
}
_TOP_LEVEL = {"name", "max_steps", "dt", "start_z_b", "start_z_e", "probe_step", "stop_on_success",
              "enforce_identity", "suite", "description"}
# target fields resolved by the loader rather than passed through
_TARGET_EXTRA = {"waypoints_file"}


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) for x in v)
    return v


def _build(cls, raw, path: str, problems: List[Tuple[str, str]], extra=frozenset()):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        problems.append((path, "expected a mapping"))
        return None
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    bad = False
    for key, val in raw.items():
        if key in extra:
            continue
        if key not in known:
            problems.append((f"{path}.{key}", "unknown field"))
            continue
        default = known[key].default
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                problems.append((f"{path}.{key}", f"expected a number, got {val!r}"))
                bad = True
                continue
        elif isinstance(default, bool) and not isinstance(val, bool):
            problems.append((f"{path}.{key}", f"expected true/false, got {val!r}"))
            bad = True
            continue
        kwargs[key] = _tupleize(val)
    if bad:
        return None
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        problems.append((path, str(exc)))
        return None


def load_waypoints(path) -> List[Tuple[float, float]]:
    """Read an ordered ``u,v`` pixel list (header row required)."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError([("target.waypoints_file", f"cannot read {path}: {exc}")]) from exc
    try:
        pts = [(float(r["u"]), float(r["v"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise ConfigError([("target.waypoints_file", f"{path}: bad row ({exc})")]) from exc
    if not pts:
        raise ConfigError([("target.waypoints_file", f"{path}: no waypoints")])
    return pts


def scenario_from_dict(raw: Dict[str, Any], base_dir: Optional[Path] = None, source=None) -> Scenario:
    problems: List[Tuple[str, str]] = []
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "scenario must be a mapping")])
    for key in raw:
        if key not in _TOP_LEVEL and key not in _SECTIONS:
            problems.append((key, "unknown field"))

    target_raw = dict(raw.get("target") or {})
    wp_file = target_raw.get("waypoints_file")
    if wp_file is not None:
        wp_path = Path(wp_file)
        if not wp_path.is_absolute():
            wp_path = (base_dir or Path.cwd()) / wp_path
        try:
            target_raw["waypoints"] = load_waypoints(wp_path)
        except ConfigError as exc:
            problems.extend(exc.problems)

    parts = {}
    for name, cls in _SECTIONS.items():
        if name == "disturbance" and raw.get(name) is None:
            parts[name] = None
            continue
        section = target_raw if name == "target" else raw.get(name)
        parts[name] = _build(cls, section, name, problems, _TARGET_EXTRA if name == "target" else frozenset())

    top = {}
    for key, cast in (("max_steps", int), ("dt", float), ("start_z_b", float), ("start_z_e", float),
                      ("probe_step", float), ("stop_on_success", bool), ("enforce_identity", bool)):
        if key in raw:
            val = raw[key]
            if cast in (int, float) and (isinstance(val, bool) or not isinstance(val, (int, float))):
                problems.append((key, f"expected a number, got {val!r}"))
                continue
            if cast is int and val != int(val):
                problems.append((key, "expected an integer"))
                continue
            if cast is bool and not isinstance(val, bool):
                problems.append((key, "expected true/false"))
                continue
            top[key] = cast(val)
    if top.get("max_steps", 1) <= 0:
        problems.append(("max_steps", "must be > 0"))
    if top.get("dt", 1.0) <= 0:
        problems.append(("dt", "must be > 0"))
    if top.get("probe_step", 1.0) == 0:
        problems.append(("probe_step", "must be nonzero"))
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        problems.append(("name", "required non-empty string"))
    suite = raw.get("suite") or {}
    if not isinstance(suite, dict):
        problems.append(("suite", "expected a mapping"))
        suite = {}

    geom = parts.get("geometry")
    if geom is not None and not problems:
        lo, hi = geom.actuator_bounds()
        q0 = geom.straight_actuators(top.get("start_z_b", 10.0), top.get("start_z_e", 0.0))
        if np.any(q0 < lo) or np.any(q0 > hi):
            problems.append(("start_z_b", "start pose outside the actuator box"))
    if problems:
        raise ConfigError(problems)
    return Scenario(name=name, suite=suite, source=None if source is None else str(source), **parts, **top)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([("<file>", f"cannot read {path}: {exc}")]) from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([("<file>", f"{path}: YAML parse error: {exc}")]) from exc
    return scenario_from_dict(raw, base_dir=path.parent, source=path)


def data_path(*parts) -> Path:
    return Path(str(resources.files("microneuro").joinpath("data", *parts)))


def builtin_scenario(name: str) -> Scenario:
    """Load one of the shipped scenario files (``static6``, ``dynamic``, ``cair``, ``biopsy``)."""
    path = data_path("scenarios", f"{name}.yaml")
    if not path.exists():
        raise ConfigError([("<file>", f"no shipped scenario named {name!r}")])
    return load_scenario(path)
