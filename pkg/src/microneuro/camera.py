"""Pinhole camera model and image Jacobian for a single point feature.

Pixel features are plain ``(2,)`` arrays ``(u, v)``. Camera-frame points are
``(3,)`` arrays in mm with +z along the optical axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, InvalidInputError


@dataclass(frozen=True)
class CameraIntrinsics:
    lambda_x: float = 500.0  # px
    lambda_y: float = 500.0  # px
    c_x: float = 355.0  # px
    c_y: float = 355.0  # px
    lam: float = 1.0  # focal length, mm
    width: int = 710
    height: int = 710

    def __post_init__(self):
        if min(self.lambda_x, self.lambda_y, self.lam) <= 0:
            raise InvalidInputError("focal lengths must be positive")
        if not (0 <= self.c_x < self.width and 0 <= self.c_y < self.height):
            raise InvalidInputError("principal point must lie inside the image")

    @property
    def size(self) -> np.ndarray:
        return np.array([self.width, self.height], dtype=float)

    @property
    def principal_point(self) -> np.ndarray:
        return np.array([self.c_x, self.c_y])


@dataclass(frozen=True)
class InteractionMatrix:
    """Image Jacobian in pixel units.

    ``L_o`` is 2x6 (linear velocity in mm, angular in rad) with both rows
    already scaled to pixels.
    """

    L_o: np.ndarray
    depth_used: float

    @property
    def L_m(self) -> np.ndarray:
        return self.L_o[:, :3]

    @property
    def L_omega(self) -> np.ndarray:
        return self.L_o[:, 3:]


def _depth(z):
    if not np.isfinite(z) or z <= 0:
        raise BehindCameraError(f"depth must be positive, got {z}")
    return float(z)


def in_image(feature, intr: CameraIntrinsics) -> bool:
    u, v = np.asarray(feature, float)
    return bool(0 <= u < intr.width and 0 <= v < intr.height)


def project(point, intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame point (mm) to pixel coordinates."""
    X, Y, Z = np.asarray(point, dtype=float)
    Z = _depth(Z)
    x, y = intr.lam * X / Z, intr.lam * Y / Z
    return np.array([intr.lambda_x * x / intr.lam + intr.c_x, intr.lambda_y * y / intr.lam + intr.c_y])


def image_plane(feature, intr: CameraIntrinsics) -> np.ndarray:
    """Metric image-plane coordinates (mm) of a pixel feature."""
    u, v = np.asarray(feature, dtype=float)
    return np.array([(u - intr.c_x) * intr.lam / intr.lambda_x, (v - intr.c_y) * intr.lam / intr.lambda_y])


def back_project(feature, depth: float, intr: CameraIntrinsics) -> np.ndarray:
    z = _depth(depth)
    x, y = image_plane(feature, intr)
    return np.array([x * z / intr.lam, y * z / intr.lam, z])


def interaction_matrix(feature, depth: float, intr: CameraIntrinsics) -> InteractionMatrix:
    """Interaction matrix at ``feature`` for a point at ``depth`` mm.

    The angular block uses ``+(lam^2 + y^2)/lam`` for the (v, omega_x) entry,
    the sign obtained by differentiating the projection of a static point.
    """
    z = _depth(depth)
    lam = intr.lam
    x, y = image_plane(feature, intr)
    L = np.array([
        [-lam / z, 0.0, x / z, x * y / lam, -(lam ** 2 + x ** 2) / lam, y],
        [0.0, -lam / z, y / z, (lam ** 2 + y ** 2) / lam, -x * y / lam, -x],
    ])
    L[0] *= intr.lambda_x / lam
    L[1] *= intr.lambda_y / lam
    return InteractionMatrix(L_o=L, depth_used=z)


def predict_feature_motion(L_m, dP) -> np.ndarray:
    L_m = np.asarray(L_m, dtype=float)
    dP = np.asarray(dP, dtype=float)
    if L_m.shape != (2, 3) or dP.shape != (3,):
        raise InvalidInputError("expected a 2x3 matrix and a 3-vector")
    return L_m @ dP
