"""Simulated robot, camera and electromagnetic tracker.

The "true" robot uses a perturbed copy of the nominal geometry plus a fixed
cable-length bias, so the controller's model is wrong in a repeatable way.
All randomness flows from one seed through independent child streams.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import camera, kinematics
from .camera import CameraIntrinsics
from .errors import InvalidInputError
from .kinematics import RobotGeometry

# sign of the relative perturbation applied to (rho_s, rho_e, z_s, d)
MISMATCH_SIGNS = (1.0, -1.0, -1.0, 1.0)
# per-cable bias pattern, multiplied by PlantConfig.cable_bias (z_b and z_e unbiased)
BIAS_PATTERN = (0.0, 1.0, -1.0, 0.0, 0.0, 0.5, -0.5, 0.0)

OK = "ok"
OUT_OF_VIEW = "out_of_view"
BEHIND = "behind_camera"


@dataclass(frozen=True)
class PlantConfig:
    mismatch_scale: float = 1.1  # 1.0 = nominal geometry
    cable_bias: float = 0.2  # mm
    actuator_noise_sd: float = 0.002  # mm per tick
    pixel_noise_sd: float = 1.0  # px
    sensor_noise_sd: float = 0.05  # mm
    rng_seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.mismatch_scale) or self.mismatch_scale <= 0:
            raise InvalidInputError("mismatch_scale must be positive")
        for name in ("actuator_noise_sd", "pixel_noise_sd", "sensor_noise_sd"):
            if not getattr(self, name) >= 0:
                raise InvalidInputError(f"{name} must be non-negative")

    def true_geometry(self, nominal: RobotGeometry) -> RobotGeometry:
        delta = self.mismatch_scale - 1.0
        f = [1.0 + s * delta for s in MISMATCH_SIGNS]
        return nominal.scaled(rho_s=f[0], rho_e=f[1], z_s=f[2], d=f[3])

    def bias_vector(self) -> np.ndarray:
        return self.cable_bias * np.asarray(BIAS_PATTERN)


@dataclass(frozen=True)
class TargetProfile:
    """Where the target is (world frame) and which pixel the camera should put it at."""

    kind: str = "static"  # static | reciprocating | waypoints
    anchor: Sequence[float] = (0.0, 0.0, 40.0)
    axis: Sequence[float] = (1.0, 0.0, 0.0)
    speed: float = 1.0  # mm/s
    stroke: float = 8.0  # mm
    goal: Sequence[float] = (355.0, 355.0)
    waypoints: Optional[Sequence[Sequence[float]]] = None  # pixel goals
    capture_tol_px: float = 15.0
    dwell_steps: int = 3

    def __post_init__(self):
        if self.kind not in ("static", "reciprocating", "waypoints"):
            raise InvalidInputError(f"unknown target kind {self.kind!r}")
        if self.kind == "reciprocating" and not (self.speed > 0 and self.stroke > 0):
            raise InvalidInputError("reciprocating targets need positive speed and stroke")
        if self.kind == "waypoints" and not self.waypoints:
            raise InvalidInputError("waypoint targets need at least one waypoint")
        if self.dwell_steps < 1 or self.capture_tol_px <= 0:
            raise InvalidInputError("dwell_steps and capture_tol_px must be positive")

    @property
    def period(self) -> float:
        return 2.0 * self.stroke / self.speed


@dataclass(frozen=True)
class DisturbanceProfile:
    onset_step: int = -1  # negative: no disturbance
    duration: int = 0
    actuator_bias: Sequence[float] = (0.0,) * 8  # mm added per tick while active
    extra_pixel_noise_sd: float = 0.0

    def __post_init__(self):
        if self.duration < 0:
            raise InvalidInputError("duration must be non-negative")
        if len(self.actuator_bias) != 8 or not np.all(np.isfinite(self.actuator_bias)):
            raise InvalidInputError("actuator_bias must be a finite 8-vector")
        if not self.extra_pixel_noise_sd >= 0:
            raise InvalidInputError("extra_pixel_noise_sd must be non-negative")

    @property
    def end_step(self) -> int:
        return self.onset_step + self.duration

    def active(self, k: int) -> bool:
        return self.onset_step >= 0 and self.onset_step <= k < self.onset_step + self.duration


def biopsy_disturbance(onset_step: int = 100, magnitude: float = 0.3, duration: int = 5) -> DisturbanceProfile:
    """Per-tick pull on the first two inner-segment cables (instrument insertion)."""
    bias = np.zeros(8)
    bias[5] = bias[6] = magnitude
    return DisturbanceProfile(onset_step=onset_step, duration=duration, actuator_bias=tuple(bias))


def target_position(profile: TargetProfile, t: float) -> np.ndarray:
    """World position of the target at time ``t`` (s).

    Reciprocating targets run out along ``axis`` at constant speed, turn at
    ``stroke`` and come back, so the displacement is a triangle wave in
    ``[0, stroke]`` that starts at the anchor.
    """
    if not t >= 0:
        raise InvalidInputError("t must be non-negative")
    anchor = np.asarray(profile.anchor, dtype=float)
    if profile.kind != "reciprocating":
        return anchor
    axis = np.asarray(profile.axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    phase = (t * profile.speed) % (2.0 * profile.stroke)
    offset = phase if phase <= profile.stroke else 2.0 * profile.stroke - phase
    return anchor + offset * axis


def inject_disturbance(profile: DisturbanceProfile, k: int) -> Tuple[np.ndarray, float]:
    if profile.active(k):
        return np.asarray(profile.actuator_bias, dtype=float), float(profile.extra_pixel_noise_sd)
    return np.zeros(8), 0.0


@dataclass
class Observation:
    feature: Optional[np.ndarray]
    status: str
    camera_point: Optional[np.ndarray] = None


class Plant:
    """True robot driven by commanded actuator increments."""

    def __init__(self, nominal: RobotGeometry, cfg: PlantConfig, q0, intr: CameraIntrinsics = CameraIntrinsics()):
        self.cfg = cfg
        self.nominal = nominal
        self.geom = cfg.true_geometry(nominal)
        self.intr = intr
        self.bias = cfg.bias_vector()
        self.q_min, self.q_max = nominal.actuator_bounds()
        q0 = np.asarray(q0, dtype=float)
        if q0.shape != (8,):
            raise InvalidInputError("q0 must be an 8-vector")
        self.q = np.clip(q0, self.q_min, self.q_max)
        seeds = np.random.SeedSequence(cfg.rng_seed).spawn(3)
        self._act_rng, self._pix_rng, self._em_rng = (np.random.default_rng(s) for s in seeds)

    # state ---------------------------------------------------------------
    def config(self) -> np.ndarray:
        return kinematics.config_array(self.q + self.bias, self.geom)

    def camera_pose(self) -> np.ndarray:
        return kinematics.camera_pose(self.config(), self.geom)

    def camera_position(self) -> np.ndarray:
        return self.camera_pose()[:3, 3]

    # actuation -----------------------------------------------------------
    def apply_control(self, u, k: int = 0, disturbance: Optional[DisturbanceProfile] = None) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (8,) or not np.all(np.isfinite(u)):
            raise InvalidInputError("control increment must be a finite 8-vector")
        step = u.copy()
        if self.cfg.actuator_noise_sd > 0:
            step += self._act_rng.normal(0.0, self.cfg.actuator_noise_sd, 8)
        if disturbance is not None:
            step += inject_disturbance(disturbance, k)[0]
        self.q = np.clip(self.q + step, self.q_min, self.q_max)
        return self.q.copy()

    def move_to(self, q) -> None:
        self.q = np.clip(np.asarray(q, dtype=float), self.q_min, self.q_max)

    # sensing -------------------------------------------------------------
    def observe_feature(self, target_world, extra_noise_sd: float = 0.0) -> Observation:
        T = self.camera_pose()
        p_c = T[:3, :3].T @ (np.asarray(target_world, dtype=float) - T[:3, 3])
        if p_c[2] <= 0:
            return Observation(None, BEHIND, p_c)
        s = camera.project(p_c, self.intr)
        sd = float(np.hypot(self.cfg.pixel_noise_sd, extra_noise_sd))
        if sd > 0:
            s = s + self._pix_rng.normal(0.0, sd, 2)
        if not camera.in_image(s, self.intr):
            return Observation(None, OUT_OF_VIEW, p_c)
        return Observation(s, OK, p_c)

    def em_sensor_read(self) -> np.ndarray:
        p = self.camera_position()
        if self.cfg.sensor_noise_sd > 0:
            p = p + self._em_rng.normal(0.0, self.cfg.sensor_noise_sd, 3)
        return p

    def probe(self, q) -> np.ndarray:
        """Command an absolute actuator state and read the tracker (offline init)."""
        self.move_to(q)
        return self.em_sensor_read()
