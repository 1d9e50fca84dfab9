import numpy as np
import pytest
from hypothesis import given, strategies as st

from microneuro import estimator, kinematics as kin
from microneuro.errors import InitializationError, InvalidInputError
from microneuro.estimator import JacobianEstimate
from microneuro.kinematics import RobotGeometry
from microneuro.plant import Plant, PlantConfig

GEOM = RobotGeometry()
QUIET = PlantConfig(mismatch_scale=1.0, cable_bias=0.0, actuator_noise_sd=0.0, pixel_noise_sd=0.0,
                    sensor_noise_sd=0.0)


def camera_of(q, geom=GEOM):
    return kin.camera_position(kin.config_array(q, geom), geom)


def test_linear_plant_gives_exact_jacobian(rng):
    A = rng.normal(size=(3, 8))
    est = estimator.initialize_offline(lambda q: A @ q, rng.normal(size=8), 0.1)
    np.testing.assert_allclose(est.probe.J_plus, A, atol=1e-12)
    np.testing.assert_allclose(est.probe.J_minus, A, atol=1e-12)
    np.testing.assert_allclose(est.J_hat, A, atol=1e-12)


def test_straight_insertion_column():
    q0 = GEOM.straight_actuators(10, 5)
    plant = Plant(GEOM, QUIET, q0)
    est = estimator.initialize_offline(plant.probe, q0, 0.1)
    np.testing.assert_allclose(est.J_hat[:, 0], [0, 0, 1], atol=1e-6)


def test_bent_pose_matches_plant_central_difference():
    q0 = kin.actuator_array([10, 0.5, 0.4, 8, 0.7, -1.0], GEOM)
    plant = Plant(GEOM, QUIET, q0)
    est = estimator.initialize_offline(plant.probe, q0, 0.1)
    h = 1e-5
    ref = np.column_stack([(camera_of(q0 + h * e) - camera_of(q0 - h * e)) / (2 * h) for e in np.eye(8)])
    assert np.linalg.norm(est.J_hat - ref) <= 1e-3 * np.linalg.norm(ref)


def test_probe_leaves_robot_at_start():
    q0 = kin.actuator_array([10, 0.5, 0.4, 8, 0.7, -1.0], GEOM)
    plant = Plant(GEOM, QUIET, q0)
    estimator.initialize_offline(plant.probe, q0, 0.1)
    np.testing.assert_array_equal(plant.q, q0)


def test_symmetric_probe_beats_one_sided_on_quadratic_plant(rng):
    A = rng.normal(size=(3, 8))
    C = rng.normal(size=(3, 8))
    q0 = rng.normal(size=8)

    def plant(q):
        return A @ q + C @ (q * q)

    true = A + C * (2 * q0)
    est = estimator.initialize_offline(plant, q0, 0.3)
    err0 = np.linalg.norm(est.J_hat - true)
    assert err0 < np.linalg.norm(est.probe.J_plus - true)
    assert err0 < np.linalg.norm(est.probe.J_minus - true)
    assert err0 < 1e-10


def test_probe_failure_is_initialization_error():
    def broken(q):
        raise IOError("tracker offline")

    with pytest.raises(InitializationError):
        estimator.initialize_offline(broken, np.zeros(8), 0.1)
    with pytest.raises(InitializationError):
        estimator.initialize_offline(lambda q: np.array([np.nan, 0, 0]), np.zeros(8), 0.1)


def test_zero_perturbation_rejected():
    dq = np.full(8, 0.1)
    dq[3] = 0.0
    with pytest.raises(InvalidInputError):
        estimator.initialize_offline(lambda q: q[:3], np.zeros(8), dq)


def test_weighting_factor_examples():
    assert estimator.weighting_factor([355, 355], [355, 355]) == 1.0
    assert estimator.weighting_factor([355 + 710, 355], [355, 355]) == pytest.approx(0.5)
    w = estimator.weighting_factor([455, 355], [355, 355])
    assert w == pytest.approx(1 / (1 + 100 / 710), abs=1e-15)
    assert w == pytest.approx(0.8765, abs=5e-5)
    raw = estimator.weighting_factor([455, 355], [355, 355], normalize=False)
    assert raw == pytest.approx(1 / 101)


@given(st.floats(0, 1e4), st.floats(0, 1e4))
def test_weighting_factor_decreases_with_error(a, b):
    wa = estimator.weighting_factor([355 + a, 355], [355, 355])
    wb = estimator.weighting_factor([355 + b, 355], [355, 355])
    assert 0 < wa <= 1 and 0 < wb <= 1
    if a < b:
        assert wa >= wb
    if b - a > 1e-3:
        assert wa > wb


def test_online_update_at_goal_keeps_previous(rng):
    prev = JacobianEstimate(J_hat=rng.normal(size=(3, 8)))
    new = estimator.online_update(rng.normal(size=(3, 8)), prev, [300, 200], [300, 200])
    np.testing.assert_array_equal(new.J_hat, prev.J_hat)
    assert new.step_index == prev.step_index + 1 and new.last_omega == 1.0


def test_online_update_identical_inputs(rng):
    J = rng.normal(size=(3, 8))
    new = estimator.online_update(J, JacobianEstimate(J_hat=J), [455, 355], [355, 355])
    np.testing.assert_allclose(new.J_hat, J, rtol=1e-15, atol=1e-15)


def test_online_update_arithmetic(rng):
    J = rng.normal(size=(3, 8))
    P = rng.normal(size=(3, 8))
    new = estimator.online_update(J, JacobianEstimate(J_hat=P), [455, 355], [355, 355])
    w = 1 / (1 + 100 / 710)
    for i in range(3):
        for j in range(8):
            assert new.J_hat[i, j] == pytest.approx(w * P[i, j] + (1 - w) * J[i, j], abs=1e-14)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0, 700), st.floats(0, 700))
def test_online_update_is_convex_combination(seed, u, v):
    r = np.random.default_rng(seed)
    J, P = r.normal(size=(3, 8)), r.normal(size=(3, 8))
    new = estimator.online_update(J, JacobianEstimate(J_hat=P), [u, v], [355, 355]).J_hat
    assert np.all(new >= np.minimum(J, P) - 1e-15) and np.all(new <= np.maximum(J, P) + 1e-15)


def test_online_update_rejects_non_finite():
    prev = JacobianEstimate(J_hat=np.zeros((3, 8)))
    bad = np.zeros((3, 8))
    bad[1, 2] = np.inf
    with pytest.raises(InvalidInputError):
        estimator.online_update(bad, prev, [0, 0], [1, 1])


def test_estimate_validates_omega():
    with pytest.raises(InvalidInputError):
        JacobianEstimate(J_hat=np.zeros((3, 8)), last_omega=0.0)
