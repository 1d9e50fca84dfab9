"""Acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line (shown even without ``-s``) and then
asserts. Suite runs are shared between criteria through module fixtures, and
each suite's wall time is measured where it is first run.
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from microneuro import camera, kinematics as kin, qp
from microneuro.camera import CameraIntrinsics
from microneuro.harness.runner import export_trace
from microneuro.harness.scenario import builtin_scenario
from microneuro.harness.suites import SUITES, compare_estimator, run_static_suite
from microneuro.kinematics import RobotGeometry
from microneuro.qp import QpProblem

from oracles import mp_tip_position, projected_gradient_batch, random_box_qps, richardson, tip_chain

GEOM = RobotGeometry()
INTR = CameraIntrinsics()


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, f"criterion {number}: {detail}"
    return emit


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def suite_runs():
    """Every shipped suite run once with its shipped seed: name -> (results, seconds)."""
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = timed(SUITES[name], builtin_scenario(name))
        return cache[name]
    return get


# ------------------------------------------------------------- criterion 1

def _kinematics_oracle_suite(rng):
    worst = 0.0
    for _ in range(1000):
        phi = np.array([rng.uniform(-10, 60), rng.uniform(0.05, GEOM.theta_max), rng.uniform(-np.pi, np.pi),
                        rng.uniform(1, 40), rng.uniform(0.05, GEOM.theta_max), rng.uniform(-np.pi, np.pi)])
        worst = max(worst, np.max(np.abs(kin.forward_kinematics(phi, GEOM) - tip_chain(phi, GEOM.z_s))))

    straight_ok = True
    for z_b, z_e in zip(rng.uniform(-20, 80, 200), rng.uniform(0, 40, 200)):
        T = kin.forward_kinematics([z_b, 0, 0, z_e, 0, 0], GEOM)
        straight_ok &= T[2, 3] == z_b + GEOM.z_s + z_e

    # continuity at the small-angle switch: no jump across it, and the motion
    # across the band around it equals the arbitrary-precision tip motion
    eps = kin.THETA_EPS
    jump = band = 0.0
    for base, j in (([0, 0, 0.4, 10, 0.5, 1.0], 1), ([2, 0.7, -1.0, 10, 0, 0.2], 4)):
        lo, hi = np.array(base, float), np.array(base, float)
        lo[j], hi[j] = eps * (1 - 1e-9), eps * (1 + 1e-9)
        jump = max(jump, np.linalg.norm(kin.forward_kinematics(lo, GEOM)[:3, 3]
                                        - kin.forward_kinematics(hi, GEOM)[:3, 3]))
        lo[j], hi[j] = 0.5 * eps, 1.5 * eps
        moved = kin.forward_kinematics(hi, GEOM)[:3, 3] - kin.forward_kinematics(lo, GEOM)[:3, 3]
        true = mp_tip_position(hi, GEOM.z_s) - mp_tip_position(lo, GEOM.z_s)
        band = max(band, np.linalg.norm(moved - true))
    return worst, straight_ok, jump, band


def test_criterion_1_kinematics_oracle(rng, verdict):
    (worst, straight_ok, jump, band), dt = timed(_kinematics_oracle_suite, rng)
    ok = worst <= 1e-9 and straight_ok and jump < 1e-8 and band < 1e-8 and dt < 1.0
    verdict(1, ok, f"max FK deviation {worst:.2e} mm, straight z exact={straight_ok}, "
                   f"switch gap {jump:.2e} mm, band error {band:.2e} mm, {dt:.2f} s")


# ------------------------------------------------------------- criterion 2

def _jacobian_suite(rng):
    worst_r = worst_a = 0.0
    for _ in range(100):
        phi = np.array([rng.uniform(0, 40), rng.uniform(0.1, GEOM.theta_max - 0.05), rng.uniform(-np.pi, np.pi),
                        rng.uniform(1, 30), rng.uniform(0.1, GEOM.theta_max - 0.05), rng.uniform(-np.pi, np.pi)])
        J = kin.robot_jacobian(phi, GEOM)
        ref = richardson(lambda p: kin.camera_position(p, GEOM), phi)
        worst_r = max(worst_r, np.linalg.norm(J - ref) / np.linalg.norm(ref))

        q = kin.actuator_array(phi, GEOM)
        Ja, _ = kin.actuator_jacobian(q, GEOM)
        base = kin.config_array(q, GEOM)

        def f(x):
            c = kin.config_array(x, GEOM)
            c[[2, 5]] = base[[2, 5]] + kin.wrap_angle(c[[2, 5]] - base[[2, 5]])
            return c

        ref = richardson(f, q, h=1e-4)
        worst_a = max(worst_a, np.linalg.norm(Ja - ref) / np.linalg.norm(ref))
    return worst_r, worst_a


def test_criterion_2_jacobian_finite_differences(rng, verdict):
    (wr, wa), dt = timed(_jacobian_suite, rng)
    verdict(2, wr <= 1e-5 and wa <= 1e-4 and dt < 5.0,
            f"J_r relative error {wr:.2e}, J_a relative error {wa:.2e}, {dt:.2f} s")


# ------------------------------------------------------------- criterion 3

def _first_order_suite(rng):
    worst = 0.0
    for _ in range(100):
        s = rng.uniform(0, 710, 2)
        P = camera.back_project(s, rng.uniform(5, 60), INTR)
        dP = rng.normal(size=3)
        dP *= rng.uniform(0, 0.01) / np.linalg.norm(dP)
        L = camera.interaction_matrix(s, P[2], INTR)
        # a camera translation of dP moves the point by -dP in the camera frame
        actual = camera.project(P - dP, INTR) - camera.project(P, INTR)
        worst = max(worst, np.linalg.norm(actual - camera.predict_feature_motion(L.L_m, dP)))
    return worst


def test_criterion_3_interaction_matrix_first_order(rng, verdict):
    worst, dt = timed(_first_order_suite, rng)
    verdict(3, worst <= 1e-3 and dt < 1.0, f"max first-order residual {worst:.2e} px, {dt:.2f} s")


# ------------------------------------------------------------- criterion 4

def _qp_suite(rng):
    H, g, lb, ub = random_box_qps(rng, 500)
    _, ref = projected_gradient_batch(H, g, lb, ub)
    kkt = gap = 0.0
    statuses = set()
    for i in range(500):
        sol = qp.solve(QpProblem(H=H[i], g=g[i], lb=lb[i], ub=ub[i]))
        statuses.add(sol.status)
        kkt = max(kkt, sol.kkt_residual)
        gap = max(gap, abs(sol.objective_value - ref[i]))

    # the argmin is only unique for strictly convex problems, so scaling uses those
    Hs, gs, lbs, ubs = random_box_qps(rng, 100)
    scale = 0.0
    for i in range(100):
        Hp = Hs[i] + 0.1 * np.eye(Hs.shape[1])
        c = 10 ** rng.uniform(-3, 3)
        a = qp.solve(QpProblem(H=Hp, g=gs[i], lb=lbs[i], ub=ubs[i])).u_star
        b = qp.solve(QpProblem(H=c * Hp, g=c * gs[i], lb=lbs[i], ub=ubs[i])).u_star
        scale = max(scale, np.max(np.abs(a - b)))
    return statuses, kkt, gap, scale


def test_criterion_4_qp_certification(rng, verdict):
    (statuses, kkt, gap, scale), dt = timed(_qp_suite, rng)
    ok = statuses == {qp.OPTIMAL} and kkt <= 1e-8 and gap <= 1e-7 and scale <= 1e-9 and dt < 10.0
    verdict(4, ok, f"statuses {sorted(statuses)}, max KKT {kkt:.2e}, max objective gap {gap:.2e}, "
                   f"max scaled argmin change {scale:.2e}, {dt:.2f} s")


# ------------------------------------------------------------- criterion 5

def test_criterion_5_imc_identity_in_loop(suite_runs, verdict):
    # run_scenario raises AssertionError at any step where the identity fails,
    # so completing every run is the check; the logged columns are re-checked
    # at the 9-significant-digit precision they are stored with
    worst, steps, enforced = 0.0, 0, True
    for name in SUITES:
        results, _ = suite_runs(name)
        for sc, trace, _ in results:
            enforced &= sc.enforce_identity
            c = trace.columns(["meas_u", "meas_v", "goal_u", "goal_v", "internal_u", "internal_v", "ref_u", "ref_v"])
            c = c[np.all(np.isfinite(c), axis=1)]
            gap = np.abs(c[:, 6:8] - (c[:, 4:6] + c[:, 2:4] - c[:, 0:2]))
            worst = max(worst, float(gap.max()) if gap.size else 0.0)
            steps += len(trace)
    verdict(5, enforced and worst <= 5e-6,
            f"identity asserted in-loop over {steps} steps of every shipped scenario, "
            f"logged residual {worst:.1e} px")


# ------------------------------------------------------------- criterion 6

def test_criterion_6_static_suite(suite_runs, verdict):
    results, dt = suite_runs("static6")
    base = builtin_scenario("static6")
    quiet = replace(base, plant=replace(base.plant, mismatch_scale=1.0, cable_bias=0.0, actuator_noise_sd=0.0,
                                        pixel_noise_sd=0.0, sensor_noise_sd=0.0))
    nominal, dt_nominal = timed(run_static_suite, quiet)
    settle = [r.settle_step for _, _, r in results]
    terminal = [r.terminal_error for _, _, r in nominal]
    ok = (len(results) == 6 and all(s is not None and s <= 200 for s in settle)
          and all(r.success for _, _, r in results) and max(terminal) < 1.0 and dt + dt_nominal < 30.0)
    verdict(6, ok, f"settle steps {settle} (window below 30 px), nominal terminal max {max(terminal):.3f} px, "
                   f"{dt + dt_nominal:.1f} s")


# ------------------------------------------------------------- criterion 7

def test_criterion_7_dynamic_suite(suite_runs, verdict):
    results, dt = suite_runs("dynamic")
    sc, _, rep = results[0]
    ok = (rep.settle_step is not None and rep.post_capture_sd <= 25.0 and rep.post_capture_max <= 60.0
          and rep.period_s is not None and abs(rep.period_s - 16.0) <= sc.dt and dt < 30.0)
    verdict(7, ok, f"SD {rep.post_capture_sd:.2f} px, max {rep.post_capture_max:.2f} px, "
                   f"period {rep.period_s:.3f} s, {dt:.1f} s")


# ------------------------------------------------------------- criterion 8

def test_criterion_8_cair_suite(suite_runs, verdict):
    results, dt = suite_runs("cair")
    letters = [sc.name[-1] for sc, _, _ in results]
    full = all(r.waypoints_captured == r.waypoints_total > 0 for _, _, r in results)
    rmse = [r.capture_rmse for _, _, r in results]
    ok = letters == list("CAIR") and full and all(v is not None and v <= 15.0 for v in rmse) and dt < 60.0
    verdict(8, ok, f"letters {''.join(letters)} fully traversed={full}, "
                   f"RMSE {[round(v, 3) for v in rmse]} px, {dt:.1f} s")


# ------------------------------------------------------------- criterion 9

def test_criterion_9_disturbance_suite(suite_runs, verdict):
    results, dt = suite_runs("biopsy")
    sc, trace, rep = results[0]
    lo, hi = sc.controller.actuator_box(sc.geometry)
    q = trace.columns([f"q_{i}" for i in range(8)])
    outside = int(np.sum(np.any((q < lo - 1e-9 * np.abs(lo)) | (q > hi + 1e-9 * np.abs(hi)), axis=1)))
    ok = (rep.recovery_steps is not None and rep.recovery_steps <= 10 and rep.constraint_violations == 0
          and outside == 0 and dt < 10.0)
    verdict(9, ok, f"recovered in {rep.recovery_steps} steps, {rep.constraint_violations + outside} "
                   f"actuator bound violations, {dt:.1f} s")


# ------------------------------------------------------------ criterion 10

def test_criterion_10_estimator_value(tmp_path_factory, verdict):
    online, analytic = compare_estimator(builtin_scenario("static6"))
    out = tmp_path_factory.mktemp("estimator_comparison")
    pairs = []
    for (sa, ta, ra), (sb, tb, rb) in zip(online, analytic):
        assert sa.plant.rng_seed == sb.plant.rng_seed and sa.target == sb.target
        export_trace(ta, out / f"{sa.name}.csv")
        export_trace(tb, out / f"{sb.name}.csv")
        pairs.append((ra.settle_step, rb.settle_step))
    ok = all(a is not None and (b is None or a <= b) for a, b in pairs)
    verdict(10, ok, f"settle steps online/analytic {pairs}, traces in {out}")


# ------------------------------------------------------------ criterion 11

def test_criterion_11_determinism(suite_runs, tmp_path, verdict):
    identical = []
    for name in SUITES:
        first, _ = suite_runs(name)
        again = SUITES[name](builtin_scenario(name))
        for (sc, ta, _), (_, tb, _) in zip(first, again):
            for fmt in ("csv", "json"):
                a = export_trace(ta, tmp_path / "a" / f"{sc.name}.{fmt}", fmt).read_bytes()
                b = export_trace(tb, tmp_path / "b" / f"{sc.name}.{fmt}", fmt).read_bytes()
                identical.append(a == b)
    verdict(11, all(identical), f"{sum(identical)}/{len(identical)} re-exported trace files byte-identical")
