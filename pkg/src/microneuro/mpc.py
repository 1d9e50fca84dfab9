"""Visual MPC with an internal-model (IMC) reference.

Per tick the controller

1. forms the IMC reference ``s_R = s_L + (s_G - s)`` from the measured
   feature ``s``, the goal ``s_G`` and the internal-model feature ``s_L``;
2. blends the analytic camera Jacobian into the running estimate;
3. builds the input matrix ``B = L_m J_hat`` (plus the camera-rotation term
   when ``rotation_model`` is on) and holds it over the horizon;
4. condenses the integrator model ``x+ = x + B u`` into a QP over the
   ``N_c`` actuator increments and solves it;
5. applies the first increment and advances ``s_L`` with it.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import camera, estimator, kinematics
from .camera import CameraIntrinsics, InteractionMatrix
from .errors import InvalidInputError
from .estimator import JacobianEstimate
from .qp import ActiveSetSolver, INFEASIBLE, QpProblem, QpSolution, UNBOUNDED, dump_problem

N_ACT = 8


def _vec(v, n, name):
    arr = np.asarray(v, dtype=float)
    if arr.shape == ():
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise InvalidInputError(f"{name} must have length {n}")
    return arr


@dataclass(frozen=True)
class MpcConfig:
    """Controller settings. Pixels for image quantities, mm for positions."""

    N_p: int = 10
    N_c: int = 10
    Q: Sequence[Sequence[float]] = ((1.0, 0.0), (0.0, 1.0))
    u_rate: float = 0.5  # |u_i| per tick, scalar or 8 values
    P_min: Sequence[float] = (-np.inf, -np.inf, -np.inf)
    P_max: Sequence[float] = (np.inf, np.inf, np.inf)
    q_min: Optional[Sequence[float]] = None  # None: geometry bounds
    q_max: Optional[Sequence[float]] = None
    s_min: Sequence[float] = (0.0, 0.0)
    s_max: Sequence[float] = (710.0, 710.0)
    slack_weight: float = 1e4
    depth_goal: float = 20.0  # z_c* used in the estimated interaction matrix
    rotation_model: bool = True
    estimator: str = "online"  # or "analytic": J_hat = current model Jacobian
    normalize_weight: bool = True
    reset_threshold: float = 200.0
    warm_start: bool = True
    qp_tol: float = 1e-8
    qp_max_iter: int = 500

    def __post_init__(self):
        if not (1 <= self.N_c <= self.N_p):
            raise InvalidInputError("need 1 <= N_c <= N_p")
        Q = np.asarray(self.Q, dtype=float)
        if Q.shape != (2, 2) or not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12:
            raise InvalidInputError("Q must be a symmetric PSD 2x2 matrix")
        if np.any(_vec(self.u_rate, N_ACT, "u_rate") <= 0):
            raise InvalidInputError("u_rate must be positive")
        if np.any(np.asarray(self.P_min, float) > np.asarray(self.P_max, float)):
            raise InvalidInputError("P_min exceeds P_max")
        if np.any(np.asarray(self.s_min, float) > np.asarray(self.s_max, float)):
            raise InvalidInputError("s_min exceeds s_max")
        if self.q_min is not None and self.q_max is not None and \
                np.any(np.asarray(self.q_min, float) > np.asarray(self.q_max, float)):
            raise InvalidInputError("q_min exceeds q_max")
        if self.estimator not in ("online", "analytic"):
            raise InvalidInputError("estimator must be 'online' or 'analytic'")
        if self.depth_goal <= 0 or self.slack_weight <= 0:
            raise InvalidInputError("depth_goal and slack_weight must be positive")

    def actuator_box(self, geom: kinematics.RobotGeometry):
        lo, hi = geom.actuator_bounds()
        lo = lo if self.q_min is None else _vec(self.q_min, N_ACT, "q_min")
        hi = hi if self.q_max is None else _vec(self.q_max, N_ACT, "q_max")
        return lo, hi


@dataclass(frozen=True)
class ImcSignals:
    measured: np.ndarray
    goal: np.ndarray
    internal: np.ndarray
    predictive_error: np.ndarray
    reference: np.ndarray

    def identity_gap(self) -> float:
        """|(s_R - s_L) - (s_G - s)|, zero up to rounding."""
        return float(np.max(np.abs((self.reference - self.internal) - (self.goal - self.measured))))


@dataclass(frozen=True)
class ControllerState:
    x: np.ndarray  # internal-model feature s_L
    q: np.ndarray  # commanded actuators
    J_hat: JacobianEstimate
    L_hat: Optional[InteractionMatrix] = None
    last_U: Optional[np.ndarray] = None  # (N_c, 8)


@dataclass(frozen=True)
class StepDiagnostics:
    signals: Optional[ImcSignals]
    omega: float
    B: np.ndarray
    objective: float = float("nan")
    kkt_residual: float = float("nan")
    slack: float = 0.0
    qp_status: str = "skipped"
    qp_iterations: int = 0
    fault: bool = False
    reset: bool = False


def build_reference(measured, goal, internal) -> ImcSignals:
    s = np.asarray(measured, dtype=float)
    s_g = np.asarray(goal, dtype=float)
    s_l = np.asarray(internal, dtype=float)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(s_g)) and np.all(np.isfinite(s_l))):
        raise InvalidInputError("IMC signals must be finite")
    return ImcSignals(measured=s, goal=s_g, internal=s_l, predictive_error=s - s_l,
                      reference=s_l + (s_g - s))


def compose_b_matrix(J_hat, L_m_hat, L_omega=None, J_omega=None, R_cam=None) -> np.ndarray:
    """B = L_m J_hat, optionally plus the rotational contribution L_omega J_omega.

    ``R_cam`` (camera orientation in the base frame) expresses the base-frame
    position Jacobian in camera coordinates before applying ``L_m``.
    """
    J_hat = np.asarray(J_hat, dtype=float)
    L_m_hat = np.asarray(L_m_hat, dtype=float)
    if J_hat.shape != (3, N_ACT) or L_m_hat.shape != (2, 3):
        raise InvalidInputError("expected J_hat 3x8 and L_m 2x3")
    if R_cam is not None:
        J_hat = np.asarray(R_cam, dtype=float).T @ J_hat
    B = L_m_hat @ J_hat
    if L_omega is not None and J_omega is not None:
        L_omega, J_omega = np.asarray(L_omega, float), np.asarray(J_omega, float)
        if L_omega.shape != (2, 3) or J_omega.shape != (3, N_ACT):
            raise InvalidInputError("expected L_omega 2x3 and J_omega 3x8")
        B = B + L_omega @ J_omega
    return B


def input_counts(N_p: int, N_c: int) -> np.ndarray:
    """C[i, c] = how many times input c has been applied after i+1 steps.

    Inputs beyond the control horizon repeat the last one.
    """
    C = np.zeros((N_p, N_c))
    for i in range(N_p):
        for j in range(i + 1):
            C[i, min(j, N_c - 1)] += 1
    return C


def prediction_matrix(B, N_p: int, N_c: int) -> np.ndarray:
    """Block lower-triangular map from stacked inputs to stacked outputs (2N_p x 8N_c)."""
    return np.kron(input_counts(N_p, N_c), np.asarray(B, dtype=float))


def predict(x0, B, U, N_p: Optional[int] = None) -> np.ndarray:
    """Roll out ``x+ = x + B u`` and return the (N_p, 2) predicted outputs."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    N_c = U.shape[0]
    N_p = N_c if N_p is None else N_p
    B = np.asarray(B, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty((N_p, x.size))
    for i in range(N_p):
        x = x + B @ U[min(i, N_c - 1)]
        out[i] = x
    return out


@dataclass(frozen=True)
class OcpLayout:
    """Index bookkeeping for the condensed problem (U stacked, then one slack)."""

    N_p: int
    N_c: int

    @property
    def n_u(self) -> int:
        return N_ACT * self.N_c

    @property
    def slack(self) -> int:
        return self.n_u

    def split(self, z) -> np.ndarray:
        return np.asarray(z[: self.n_u]).reshape(self.N_c, N_ACT)


def assemble_ocp(state: ControllerState, signals: ImcSignals, cfg: MpcConfig, phi, B,
                 geom: kinematics.RobotGeometry) -> QpProblem:
    """Condensed QP over the stacked increments and one shared slack.

    Cost: sum_i |x_i - s_R|_Q^2 + w s + 1/2 w s^2. Hard: rate bounds and the
    cumulative actuator box. Soft (via s): predicted feature box and the
    linearized camera-position box.
    """
    B = np.asarray(B, dtype=float)
    if not np.all(np.isfinite(B)) or not np.all(np.isfinite(state.q)):
        raise InvalidInputError("non-finite OCP data")
    N_p, N_c = cfg.N_p, cfg.N_c
    lay = OcpLayout(N_p, N_c)
    n = lay.n_u + 1
    C = input_counts(N_p, N_c)
    Phi = np.kron(C, B)
    Qbar = np.kron(np.eye(N_p), np.asarray(cfg.Q, dtype=float))
    x0 = np.asarray(signals.internal, dtype=float)
    dev = np.tile(x0 - signals.reference, N_p)

    H = np.zeros((n, n))
    H[: lay.n_u, : lay.n_u] = 2.0 * Phi.T @ Qbar @ Phi
    H = 0.5 * (H + H.T)
    H[lay.slack, lay.slack] = cfg.slack_weight
    g = np.zeros(n)
    g[: lay.n_u] = 2.0 * Phi.T @ Qbar @ dev
    g[lay.slack] = cfg.slack_weight

    rows, lo, hi = [], [], []

    def add(block, slack_coef, lower, upper):
        r = np.zeros((block.shape[0], n))
        r[:, : lay.n_u] = block
        r[:, lay.slack] = slack_coef
        rows.append(r)
        lo.append(np.broadcast_to(lower, block.shape[0]))
        hi.append(np.broadcast_to(upper, block.shape[0]))

    # cumulative actuator box (hard)
    q_lo, q_hi = cfg.actuator_box(geom)
    S = np.kron(C, np.eye(N_ACT))
    add(S, 0.0, np.tile(q_lo - state.q, N_p), np.tile(q_hi - state.q, N_p))
    # predicted feature box (soft)
    s_lo = np.tile(np.asarray(cfg.s_min, float) - x0, N_p)
    s_hi = np.tile(np.asarray(cfg.s_max, float) - x0, N_p)
    add(Phi, 1.0, s_lo, np.inf)
    add(Phi, -1.0, -np.inf, s_hi)
    # linearized camera-position box (soft), only for finite bounds
    P_now = kinematics.camera_position(phi, geom)
    JS = np.kron(C, state.J_hat.J_hat)
    p_lo = np.tile(np.asarray(cfg.P_min, float) - P_now, N_p)
    p_hi = np.tile(np.asarray(cfg.P_max, float) - P_now, N_p)
    fin_lo, fin_hi = np.isfinite(p_lo), np.isfinite(p_hi)
    if fin_lo.any():
        add(JS[fin_lo], 1.0, p_lo[fin_lo], np.inf)
    if fin_hi.any():
        add(JS[fin_hi], -1.0, -np.inf, p_hi[fin_hi])

    rate = np.tile(_vec(cfg.u_rate, N_ACT, "u_rate"), N_c)
    return QpProblem(H=H, g=g, A=np.vstack(rows), lb_A=np.concatenate(lo), ub_A=np.concatenate(hi),
                     lb=np.append(-rate, 0.0), ub=np.append(rate, np.inf))


def _warm_start(problem: QpProblem, last_U, lay: OcpLayout):
    """Shifted previous plan with the slack raised just enough to be feasible."""
    if last_U is None:
        z = np.zeros(problem.n)
    else:
        U = np.vstack([last_U[1:], last_U[-1:]])
        z = np.append(U.ravel(), 0.0)
        z = np.clip(z, problem.lb, problem.ub)
    soft = problem.A[:, lay.slack] != 0
    ax = problem.A @ z
    hard_viol = np.maximum(problem.lb_A - ax, ax - problem.ub_A)[~soft]
    if hard_viol.size and hard_viol.max() > 0:
        z = np.zeros(problem.n)
        ax = problem.A @ z
    viol = np.maximum(problem.lb_A - ax, ax - problem.ub_A)[soft]
    z[lay.slack] = max(0.0, viol.max(initial=0.0))
    return z


def safe_increment(q, u, rate, lo, hi) -> np.ndarray:
    """Clip ``u`` so that ``|u| <= rate`` and ``lo <= q + u <= hi`` hold in floating point."""
    target = np.clip(q + np.clip(u, -rate, rate), lo, hi)
    # q + u and (q + u) - q round; walk the target towards q until both checks hold
    fixable = (q >= lo) & (q <= hi)
    for _ in range(64):
        u = target - q
        bad = ((np.abs(u) > rate) | (q + u < lo) | (q + u > hi)) & fixable
        if not bad.any():
            break
        target[bad] = np.nextafter(target[bad], q[bad])
    return u


def mpc_step(state: ControllerState, measured, goal, phi, cfg: MpcConfig, J_analytic,
             intr: CameraIntrinsics, geom: kinematics.RobotGeometry, J_omega=None, R_cam=None,
             solver: Optional[ActiveSetSolver] = None, dump_path=None):
    """One receding-horizon tick. Returns ``(u_first, new_state, diagnostics)``.

    ``J_analytic`` is the model camera-position Jacobian at ``state.q``;
    ``J_omega`` the model camera angular-velocity Jacobian (used only with
    ``cfg.rotation_model``) and ``R_cam`` the model camera orientation. When
    the QP has no feasible point the increment is zero and
    ``diagnostics.fault`` is set.
    """
    goal = np.asarray(goal, dtype=float)
    if measured is None or not np.all(np.isfinite(measured)):
        diag = StepDiagnostics(signals=None, omega=state.J_hat.last_omega, B=np.zeros((2, N_ACT)),
                               fault=True, qp_status="no_measurement")
        return np.zeros(N_ACT), replace(state, last_U=None), diag

    measured = np.asarray(measured, dtype=float)
    x = state.x
    reset = False
    if x is None or np.linalg.norm(measured - x) > cfg.reset_threshold:
        x, reset = measured.copy(), state.x is not None
    signals = build_reference(measured, goal, x)

    if cfg.estimator == "online":
        J_hat = estimator.online_update(J_analytic, state.J_hat, measured, goal,
                                        normalize=cfg.normalize_weight, image_size=intr.size)
    else:
        J_hat = estimator.JacobianEstimate(J_hat=J_analytic, step_index=state.J_hat.step_index + 1)
    L_hat = camera.interaction_matrix(goal, cfg.depth_goal, intr)
    if cfg.rotation_model and J_omega is not None:
        B = compose_b_matrix(J_hat.J_hat, L_hat.L_m, L_hat.L_omega, J_omega, R_cam)
    else:
        B = compose_b_matrix(J_hat.J_hat, L_hat.L_m)

    work = replace(state, x=x, J_hat=J_hat, L_hat=L_hat)
    problem = assemble_ocp(work, signals, cfg, phi, B, geom)
    lay = OcpLayout(cfg.N_p, cfg.N_c)
    solver = solver or ActiveSetSolver(tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)
    z0 = _warm_start(problem, state.last_U if cfg.warm_start else None, lay)
    sol: QpSolution = solver.solve(problem, x0=z0)

    fault = sol.status in (INFEASIBLE, UNBOUNDED)
    if fault:
        if dump_path is not None:
            dump_problem(problem, dump_path, sol, note="controller fault")
        u = np.zeros(N_ACT)
        U = None
    else:
        U = lay.split(sol.u_star)
        rate = _vec(cfg.u_rate, N_ACT, "u_rate")
        q_lo, q_hi = cfg.actuator_box(geom)
        u = safe_increment(state.q, U[0], rate, q_lo, q_hi)
        if sol.status != "optimal" and dump_path is not None:
            dump_problem(problem, dump_path, sol, note="non-optimal solve")

    new_state = ControllerState(x=x + B @ u, q=state.q + u, J_hat=J_hat, L_hat=L_hat, last_U=U)
    diag = StepDiagnostics(signals=signals, omega=J_hat.last_omega, B=B, objective=sol.objective_value,
                           kkt_residual=sol.kkt_residual, slack=float(sol.u_star[lay.slack]),
                           qp_status=sol.status, qp_iterations=sol.iterations, fault=fault, reset=reset)
    return u, new_state, diag


class VisualMpcController:
    """Stateful wrapper that evaluates the nominal model each tick."""

    def __init__(self, geom: kinematics.RobotGeometry, intr: CameraIntrinsics, cfg: MpcConfig,
                 q0, J0: Optional[JacobianEstimate] = None, dump_dir=None, name: str = "controller"):
        self.geom = geom
        self.intr = intr
        self.cfg = cfg
        q0 = np.asarray(q0, dtype=float)
        if J0 is None:
            J0 = JacobianEstimate(J_hat=kinematics.analytic_jacobian(q0, geom))
        self.state = ControllerState(x=None, q=q0.copy(), J_hat=J0)
        self.solver = ActiveSetSolver(tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)
        self.dump_dir = dump_dir
        self.name = name
        self.k = 0

    def step(self, measured, goal):
        q = self.state.q
        phi = kinematics.config_array(q, self.geom)
        J = kinematics.analytic_jacobian(q, self.geom)
        J_omega = R_cam = None
        if self.cfg.rotation_model:
            J_omega = kinematics.camera_twist_jacobian(q, self.geom)[3:]
            R_cam = kinematics.camera_pose(phi, self.geom)[:3, :3]
        dump = None
        if self.dump_dir is not None:
            dump = f"{self.dump_dir}/qp_failure_{self.name}_{self.k:05d}.txt"
        u, self.state, diag = mpc_step(self.state, measured, goal, phi, self.cfg, J, self.intr, self.geom,
                                       J_omega=J_omega, R_cam=R_cam, solver=self.solver, dump_path=dump)
        self.k += 1
        return u, diag
