"""Image-guided model-predictive control of a two-segment cable-driven neuroendoscope.

Submodules: ``kinematics`` (constant-curvature model), ``camera`` (pinhole
projection and image Jacobian), ``estimator`` (actuator-to-camera Jacobian
estimate), ``qp`` (dense active-set QP), ``mpc`` (controller), ``plant``
(simulated robot and sensors) and ``harness`` (scenarios, metrics, CLI).
"""

__version__ = "0.1.0"
