"""Constant-curvature kinematics of the dual-segment endoscope.

Coordinates
-----------
Actuator vector ``q`` (8,):   z_b, l_s1, l_s2, l_s3, z_e, l_e1, l_e2, l_e3   [mm]
Config vector  ``phi`` (6,):  z_b, theta_s, phi_s, z_e, theta_e, phi_e       [mm, rad]

Segment ``s`` is the outer sheath (fixed bending length ``z_s``), segment ``e``
the inner endoscope whose bending length is its extension ``z_e``. The
dataclasses below are thin named views over these arrays; every function
accepts either form.
"""
from __future__ import annotations

from dataclasses import dataclass, astuple, replace
from typing import Optional, Tuple

import numpy as np

from .errors import InvalidInputError, RangeError

THETA_EPS = 1e-6  # rad; below this the arc block uses its series limit
FD_STEP = 1e-6  # rad / mm
SQRT3 = np.sqrt(3.0)

# Angular position of cable m around the backbone. The -pi/6 offset is what
# makes the inverse cable map consistent with the atan2 bending-plane formula.
CABLE_ANGLES = -np.pi / 6 + np.arange(3) * 2 * np.pi / 3

Q_LABELS = ("z_b", "l_s1", "l_s2", "l_s3", "z_e", "l_e1", "l_e2", "l_e3")
PHI_LABELS = ("z_b", "theta_s", "phi_s", "z_e", "theta_e", "phi_e")


@dataclass(frozen=True)
class ActuatorState:
    z_b: float
    l_s1: float
    l_s2: float
    l_s3: float
    z_e: float
    l_e1: float
    l_e2: float
    l_e3: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, q) -> "ActuatorState":
        return cls(*(float(v) for v in _vector(q, 8, "q")))


@dataclass(frozen=True)
class ConfigState:
    z_b: float
    theta_s: float
    phi_s: float
    z_e: float
    theta_e: float
    phi_e: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, phi) -> "ConfigState":
        return cls(*(float(v) for v in _vector(phi, 6, "phi")))


@dataclass(frozen=True)
class RobotGeometry:
    """Geometric parameters. Lengths in mm, angles in rad.

    ``q_min``/``q_max`` default to the cable travel implied by ``theta_max``
    around the straight cable lengths.

    ``inner_plane_relative`` selects how the endoscope bending-plane angle is
    reported. The tip transform applies ``phi_e`` after the sheath arc, i.e.
    relative to the sheath's bending plane, while the cable formula yields the
    angle in the (non-twisting) cable frame. With the flag on, ``phi_e`` is
    that cable-frame angle minus ``phi_s``, which keeps the camera pose a
    continuous function of the cable lengths. With it off, the cable-frame
    angle is used as is.
    """

    rho_s: float = 1.8
    rho_e: float = 1.0
    z_s: float = 20.0
    d: float = 1.0
    cable_base_length_s: float = 30.0
    cable_base_length_e: float = 30.0
    theta_max: float = 2 * np.pi / 3
    z_b_range: Tuple[float, float] = (-20.0, 80.0)
    z_e_range: Tuple[float, float] = (0.0, 40.0)
    q_min: Optional[Tuple[float, ...]] = None
    q_max: Optional[Tuple[float, ...]] = None
    inner_plane_relative: bool = True

    def __post_init__(self):
        for name in ("rho_s", "rho_e", "z_s", "cable_base_length_s", "cable_base_length_e", "theta_max"):
            if not np.isfinite(getattr(self, name)) or getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive and finite")
        if not np.isfinite(self.d) or self.d < 0:
            raise InvalidInputError("d must be non-negative")
        lo, hi = self.actuator_bounds()
        if np.any(lo > hi):
            raise InvalidInputError("actuator bounds inconsistent (min > max)")

    def actuator_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.q_min is not None and self.q_max is not None:
            return np.asarray(self.q_min, float), np.asarray(self.q_max, float)
        ts = self.rho_s * self.theta_max
        te = self.rho_e * self.theta_max
        ls, le = self.cable_base_length_s, self.cable_base_length_e
        lo = np.array([self.z_b_range[0], ls - ts, ls - ts, ls - ts, self.z_e_range[0], le - te, le - te, le - te])
        hi = np.array([self.z_b_range[1], ls + ts, ls + ts, ls + ts, self.z_e_range[1], le + te, le + te, le + te])
        if self.q_min is not None:
            lo = np.asarray(self.q_min, float)
        if self.q_max is not None:
            hi = np.asarray(self.q_max, float)
        return lo, hi

    def straight_actuators(self, z_b: float = 0.0, z_e: float = 0.0) -> np.ndarray:
        ls, le = self.cable_base_length_s, self.cable_base_length_e
        return np.array([z_b, ls, ls, ls, z_e, le, le, le], dtype=float)

    def scaled(self, rho_s=1.0, rho_e=1.0, z_s=1.0, d=1.0) -> "RobotGeometry":
        """Copy with multiplicative factors on the mismatch-prone parameters."""
        return replace(self, rho_s=self.rho_s * rho_s, rho_e=self.rho_e * rho_e,
                       z_s=self.z_s * z_s, d=self.d * d)


def _vector(x, n, name) -> np.ndarray:
    if isinstance(x, (ActuatorState, ConfigState)):
        x = x.as_array()
    arr = np.asarray(x, dtype=float)
    if arr.shape != (n,):
        raise InvalidInputError(f"{name} must have shape ({n},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, float) + np.pi, 2 * np.pi) - np.pi
    return np.where(w <= -np.pi, w + 2 * np.pi, w)


# ---------------------------------------------------------------- cable maps

def _segment_angles(l1, l2, l3, rho):
    quad = 0.5 * ((l1 - l2) ** 2 + (l2 - l3) ** 2 + (l1 - l3) ** 2)
    theta = 2.0 * np.sqrt(quad) / (3.0 * rho)
    if theta == 0.0:
        return 0.0, 0.0
    phi = np.arctan2(l1 + l3 - 2.0 * l2, SQRT3 * (l3 - l1))
    if phi <= -np.pi:
        phi += 2 * np.pi
    return theta, phi


def config_array(q, geom: RobotGeometry) -> np.ndarray:
    """Array form of :func:`actuator_to_config`."""
    q = _vector(q, 8, "q")
    if np.any(q[[1, 2, 3, 5, 6, 7]] <= 0):
        raise InvalidInputError("cable lengths must be positive")
    th_s, ph_s = _segment_angles(q[1], q[2], q[3], geom.rho_s)
    th_e, ph_e = _segment_angles(q[5], q[6], q[7], geom.rho_e)
    if geom.inner_plane_relative and th_e > 0.0:
        ph_e = float(wrap_angle(ph_e - ph_s))
    return np.array([q[0], th_s, ph_s, q[4], th_e, ph_e])


def actuator_to_config(q, geom: RobotGeometry) -> ConfigState:
    return ConfigState.from_array(config_array(q, geom))


def actuator_array(phi, geom: RobotGeometry) -> np.ndarray:
    phi = _vector(phi, 6, "phi")
    out = np.empty(8)
    out[0], out[4] = phi[0], phi[3]
    bend_e = phi[5] + phi[2] if geom.inner_plane_relative else phi[5]
    for theta, bend, rho, base, sl in ((phi[1], phi[2], geom.rho_s, geom.cable_base_length_s, slice(1, 4)),
                                       (phi[4], bend_e, geom.rho_e, geom.cable_base_length_e, slice(5, 8))):
        if theta < 0 or theta > geom.theta_max:
            raise RangeError(f"bending angle {theta} outside [0, {geom.theta_max}]")
        out[sl] = base - rho * theta * np.cos(bend - CABLE_ANGLES)
    return out


def config_to_actuator(phi, geom: RobotGeometry) -> ActuatorState:
    return ActuatorState.from_array(actuator_array(phi, geom))


# ---------------------------------------------------------------- transforms

def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    T = np.eye(4)
    T[0, 0], T[0, 1], T[1, 0], T[1, 1] = c, -s, s, c
    return T


def arc_block(theta: float, length: float) -> np.ndarray:
    """tau_x(L/theta) R_y(theta) tau_x(-L/theta), finite at theta = 0."""
    c, s = np.cos(theta), np.sin(theta)
    if abs(theta) < THETA_EPS:
        f1, f2 = theta / 2.0, 1.0 - theta * theta / 6.0
    else:
        f1, f2 = 2.0 * np.sin(theta / 2.0) ** 2 / theta, s / theta
    T = np.eye(4)
    T[0, 0], T[0, 2], T[2, 0], T[2, 2] = c, s, -s, c
    T[0, 3], T[2, 3] = length * f1, length * f2
    return T


def _tip_pose(phi: np.ndarray, geom: RobotGeometry) -> np.ndarray:
    T = np.eye(4)
    T[2, 3] = phi[0]
    T = T @ rot_z(phi[2]) @ arc_block(phi[1], geom.z_s)
    return T @ rot_z(phi[5]) @ arc_block(phi[4], phi[3])


def _camera_pose(phi: np.ndarray, geom: RobotGeometry) -> np.ndarray:
    offset = rot_z(-phi[2] - phi[5])
    offset[1, 3] = -geom.d * offset[1, 1]
    offset[0, 3] = -geom.d * offset[0, 1]
    return _tip_pose(phi, geom) @ offset


def forward_kinematics(phi, geom: RobotGeometry) -> np.ndarray:
    """Base-to-tip homogeneous transform (4x4, mm)."""
    return _tip_pose(_vector(phi, 6, "phi"), geom)


def camera_pose(phi, geom: RobotGeometry) -> np.ndarray:
    """Base-to-camera transform: tip pose, untwisted by -(phi_s + phi_e), offset by d along -y."""
    return _camera_pose(_vector(phi, 6, "phi"), geom)


def camera_position(phi, geom: RobotGeometry) -> np.ndarray:
    return _camera_pose(_vector(phi, 6, "phi"), geom)[:3, 3]


def is_valid_pose(T, tol: float = 1e-9) -> bool:
    T = np.asarray(T, float)
    if T.shape != (4, 4) or not np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0]):
        return False
    R = T[:3, :3]
    return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) < tol)


# ----------------------------------------------------------------- Jacobians

def robot_jacobian(phi, geom: RobotGeometry, step: float = FD_STEP) -> np.ndarray:
    """3x6 Jacobian of camera position w.r.t. the configuration vector.

    Central differences; the bending-plane column of a straight segment is
    zero because that angle carries no information there.
    """
    phi = _vector(phi, 6, "phi")
    J = np.empty((3, 6))
    for j in range(6):
        dp = np.zeros(6)
        dp[j] = step
        J[:, j] = (_camera_pose(phi + dp, geom)[:3, 3] - _camera_pose(phi - dp, geom)[:3, 3]) / (2 * step)
    if phi[1] < THETA_EPS:
        J[:, 2] = 0.0
    if phi[4] < THETA_EPS:
        J[:, 5] = 0.0
    return J


def _segment_degenerate(q: np.ndarray, sl: slice, step: float) -> bool:
    l1, l2, l3 = q[sl]
    spread = np.sqrt(0.5 * ((l1 - l2) ** 2 + (l2 - l3) ** 2 + (l1 - l3) ** 2))
    return spread < 100 * step


def actuator_jacobian(q, geom: RobotGeometry, step: float = FD_STEP):
    """6x8 Jacobian of the configuration w.r.t. actuators.

    Returns ``(J_a, degenerate)`` where ``degenerate`` is a pair of flags for
    the (sheath, endoscope) segments. A degenerate (near-straight) segment
    gets forward differences for its bending-angle row and a zero
    bending-plane row.
    """
    q = _vector(q, 8, "q")
    flags = (_segment_degenerate(q, slice(1, 4), step), _segment_degenerate(q, slice(5, 8), step))
    base = config_array(q, geom)
    J = np.zeros((6, 8))
    J[0, 0] = 1.0
    J[3, 4] = 1.0
    coupled = geom.inner_plane_relative and not flags[1]
    for seg, (cols, rows) in enumerate((((1, 2, 3), (1, 2)), ((5, 6, 7), (4, 5)))):
        th_row, ph_row = rows
        for j in cols:
            dq = np.zeros(8)
            dq[j] = step
            plus = config_array(q + dq, geom)
            if flags[seg]:
                J[th_row, j] = (plus[th_row] - base[th_row]) / step
                continue
            minus = config_array(q - dq, geom)
            J[th_row, j] = (plus[th_row] - minus[th_row]) / (2 * step)
            J[ph_row, j] = wrap_angle(plus[ph_row] - minus[ph_row]) / (2 * step)
            if seg == 0 and coupled:
                # relative endoscope plane angle moves with the sheath plane
                J[5, j] = wrap_angle(plus[5] - minus[5]) / (2 * step)
    return J, flags


def analytic_jacobian(q, geom: RobotGeometry) -> np.ndarray:
    """Composite 3x8 camera-position Jacobian J_r J_a.

    Cable columns of a degenerate segment are zeroed: the one-sided limit at
    a straight segment does not describe the true bending direction.
    """
    q = _vector(q, 8, "q")
    Ja, flags = actuator_jacobian(q, geom)
    J = robot_jacobian(config_array(q, geom), geom) @ Ja
    if flags[0]:
        J[:, 1:4] = 0.0
    if flags[1]:
        J[:, 5:8] = 0.0
    return J


def _vee(S: np.ndarray) -> np.ndarray:
    return 0.5 * np.array([S[2, 1] - S[1, 2], S[0, 2] - S[2, 0], S[1, 0] - S[0, 1]])


def camera_twist_jacobian(q, geom: RobotGeometry, step: float = FD_STEP) -> np.ndarray:
    """6x8 map from actuator increments to camera twist in the camera frame.

    Rows 0-2 are linear velocity, rows 3-5 angular velocity. Differentiated
    directly in actuator space, where the camera pose is smooth even for
    straight segments.
    """
    q = _vector(q, 8, "q")
    T0 = _camera_pose(config_array(q, geom), geom)
    R0t = T0[:3, :3].T
    J = np.empty((6, 8))
    for j in range(8):
        dq = np.zeros(8)
        dq[j] = step
        Tp = _camera_pose(config_array(q + dq, geom), geom)
        Tm = _camera_pose(config_array(q - dq, geom), geom)
        J[:3, j] = R0t @ (Tp[:3, 3] - Tm[:3, 3]) / (2 * step)
        J[3:, j] = _vee(R0t @ (Tp[:3, :3] - Tm[:3, :3])) / (2 * step)
    return J


# ------------------------------------------------------------------------ IK

def dls_ik_step(phi, p_goal, sigma: float, geom: RobotGeometry) -> np.ndarray:
    """Damped-least-squares configuration increment towards a camera position goal."""
    if not sigma > 0:
        raise InvalidInputError("sigma must be positive")
    phi = _vector(phi, 6, "phi")
    p_goal = _vector(p_goal, 3, "p_goal")
    J = robot_jacobian(phi, geom)
    err = p_goal - _camera_pose(phi, geom)[:3, 3]
    return J.T @ np.linalg.solve(J @ J.T + sigma * np.eye(3), err)


def normalize_config(phi: np.ndarray) -> np.ndarray:
    """Fold negative bending angles into the opposite bending plane."""
    phi = np.array(phi, dtype=float)
    for t, p in ((1, 2), (4, 5)):
        if phi[t] < 0:
            phi[t] = -phi[t]
            phi[p] += np.pi
        phi[p] = 0.0 if phi[t] == 0 else float(wrap_angle(phi[p]))
    return phi


def dls_ik(phi0, p_goal, geom: RobotGeometry, sigma: float = 0.01, tol: float = 0.01,
           max_iter: int = 100, max_step: float = 0.2):
    """Iterate :func:`dls_ik_step` with step clamping.

    Returns ``(phi, converged, iterations, error_norm)``.
    """
    phi = normalize_config(_vector(phi0, 6, "phi0"))
    p_goal = _vector(p_goal, 3, "p_goal")
    err = np.linalg.norm(p_goal - _camera_pose(phi, geom)[:3, 3])
    for it in range(1, max_iter + 1):
        dphi = dls_ik_step(phi, p_goal, sigma, geom)
        norm = np.linalg.norm(dphi)
        if norm > max_step:
            dphi *= max_step / norm
        phi = normalize_config(phi + dphi)
        err = np.linalg.norm(p_goal - _camera_pose(phi, geom)[:3, 3])
        if err < tol:
            return phi, True, it, err
    return phi, False, max_iter, err
