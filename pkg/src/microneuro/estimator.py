"""Actuator-to-camera Jacobian: offline +/- probing and online convex blending."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InitializationError, InvalidInputError

DEFAULT_IMAGE_SIZE = (710.0, 710.0)


@dataclass(frozen=True)
class ProbeResult:
    """Raw offline probe data.

    ``dP_plus[:, i]`` is the camera displacement measured after moving
    actuator ``i`` by ``+dq[i]``; ``dP_minus`` likewise for ``-dq[i]``.
    """

    dq: np.ndarray
    dP_plus: np.ndarray
    dP_minus: np.ndarray

    @property
    def J_plus(self) -> np.ndarray:
        return self.dP_plus / self.dq

    @property
    def J_minus(self) -> np.ndarray:
        return self.dP_minus / -self.dq


@dataclass(frozen=True)
class JacobianEstimate:
    J_hat: np.ndarray
    step_index: int = 0
    last_omega: float = 1.0
    probe: Optional[ProbeResult] = None

    def __post_init__(self):
        J = np.asarray(self.J_hat, dtype=float)
        if J.shape != (3, 8) or not np.all(np.isfinite(J)):
            raise InvalidInputError("J_hat must be a finite 3x8 matrix")
        if not 0.0 < self.last_omega <= 1.0:
            raise InvalidInputError("omega must lie in (0, 1]")
        object.__setattr__(self, "J_hat", J)


def _read(probe, q):
    try:
        p = np.asarray(probe(q), dtype=float)
    except Exception as exc:  # sensor/driver failures of any kind
        raise InitializationError(f"probe failed at q={q}: {exc}") from exc
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise InitializationError(f"probe returned an invalid reading {p!r}")
    return p


def probe_jacobian(probe: Callable[[np.ndarray], np.ndarray], q0, dq_plus) -> ProbeResult:
    """Move one actuator at a time by +dq then -dq and record camera displacement.

    ``probe(q)`` commands the robot to ``q`` and returns the measured camera
    position (mm).
    """
    q0 = np.asarray(q0, dtype=float)
    dq = np.broadcast_to(np.asarray(dq_plus, dtype=float), (8,)).copy()
    if q0.shape != (8,) or not np.all(np.isfinite(q0)):
        raise InvalidInputError("q0 must be a finite 8-vector")
    if np.any(dq == 0) or not np.all(np.isfinite(dq)):
        raise InvalidInputError("every probe perturbation must be finite and nonzero")
    plus = np.empty((3, 8))
    minus = np.empty((3, 8))
    for i in range(8):
        ref = _read(probe, q0)
        step = np.zeros(8)
        step[i] = dq[i]
        plus[:, i] = _read(probe, q0 + step) - ref
        minus[:, i] = _read(probe, q0 - step) - ref
    _read(probe, q0)  # leave the robot where it started
    return ProbeResult(dq=dq, dP_plus=plus, dP_minus=minus)


def initialize_offline(probe: Callable[[np.ndarray], np.ndarray], q0, dq_plus=0.1) -> JacobianEstimate:
    """Initial estimate as the mean of the forward and backward probe Jacobians."""
    result = probe_jacobian(probe, q0, dq_plus)
    return JacobianEstimate(J_hat=0.5 * (result.J_plus + result.J_minus), step_index=0,
                            last_omega=1.0, probe=result)


def weighting_factor(feature, goal, normalize: bool = True, image_size=DEFAULT_IMAGE_SIZE) -> float:
    """omega = 1 / (1 + eps), eps the (optionally image-normalized) feature error."""
    diff = np.asarray(feature, dtype=float) - np.asarray(goal, dtype=float)
    if normalize:
        diff = diff / np.asarray(image_size, dtype=float)
    return 1.0 / (1.0 + float(np.linalg.norm(diff)))


def online_update(J_analytic, prev: JacobianEstimate, feature, goal, normalize: bool = True,
                  image_size=DEFAULT_IMAGE_SIZE) -> JacobianEstimate:
    """Blend the current model Jacobian with the previous estimate.

    Close to the goal (omega -> 1) the previous estimate dominates.
    """
    J = np.asarray(J_analytic, dtype=float)
    if J.shape != (3, 8) or not np.all(np.isfinite(J)):
        raise InvalidInputError("analytic Jacobian must be a finite 3x8 matrix")
    w = weighting_factor(feature, goal, normalize, image_size)
    return JacobianEstimate(J_hat=(1.0 - w) * J + w * prev.J_hat, step_index=prev.step_index + 1,
                            last_omega=w, probe=prev.probe)
