"""Dense convex QP solver (primal active set) with KKT certification.

Solves::

    minimize    1/2 x'Hx + g'x
    subject to  lb_A <= A x <= ub_A
                lb   <=   x <= ub

``H`` only needs to be positive semidefinite. Each iteration minimizes the
objective on the current working set in reduced coordinates; the reduced
Hessian is factored spectrally so directions of zero curvature are
recognised instead of being regularized away. A feasible start is found by a
phase-1 LP solved with the same machinery.

Multiplier convention: stationarity reads ``Hx + g = A' lam_A + lam_x`` with
``lam >= 0`` on constraints active at their lower side and ``lam <= 0`` at
their upper side.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max_iterations"
UNBOUNDED = "unbounded"

_EIG_RTOL = 1e-10
_LOWER, _UPPER = -1, 1


@dataclass(frozen=True)
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A: Optional[np.ndarray] = None
    lb_A: Optional[np.ndarray] = None
    ub_A: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        g = np.asarray(self.g, dtype=float).ravel()
        n = g.size
        if H.shape != (n, n):
            raise ValueError(f"H must be {n}x{n}, got {H.shape}")
        if not np.all(np.isfinite(H)) or not np.all(np.isfinite(g)):
            raise ValueError("H and g must be finite")
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(H), initial=0.0)):
            raise ValueError("H must be symmetric")
        A = np.zeros((0, n)) if self.A is None else np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.size == 0:
            A = A.reshape(0, n)
        m = A.shape[0]
        if A.shape[1] != n:
            raise ValueError(f"A must have {n} columns")

        def vec(v, size, fill):
            out = np.full(size, fill) if v is None else np.asarray(v, dtype=float).ravel()
            if out.shape != (size,):
                raise ValueError("bound vector has the wrong length")
            return out

        lb_A, ub_A = vec(self.lb_A, m, -np.inf), vec(self.ub_A, m, np.inf)
        lb, ub = vec(self.lb, n, -np.inf), vec(self.ub, n, np.inf)
        if np.any(lb > ub) or np.any(lb_A > ub_A):
            raise ValueError("lower bounds must not exceed upper bounds")
        for name, val in (("H", H), ("g", g), ("A", A), ("lb_A", lb_A), ("ub_A", ub_A), ("lb", lb), ("ub", ub)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.g @ x)

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        ax = self.A @ x
        parts = [self.lb - x, x - self.ub, self.lb_A - ax, ax - self.ub_A]
        return float(max(0.0, *(np.max(p, initial=0.0) for p in parts)))


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    primal: float
    dual: float
    complementarity: float
    scale: float
    primal_scale: float

    @property
    def total(self) -> float:
        """Largest residual, each normalized by the problem's natural scale."""
        return max(self.stationarity / self.scale, self.primal / self.primal_scale,
                   self.dual / self.scale, self.complementarity / (self.scale * self.primal_scale))


@dataclass(frozen=True)
class QpSolution:
    u_star: np.ndarray
    objective_value: float
    kkt_residual: float
    status: str
    lam_A: np.ndarray
    lam_x: np.ndarray
    iterations: int = 0
    report: Optional[KktReport] = None
    active_bounds: Tuple[Tuple[int, int], ...] = field(default=())
    active_rows: Tuple[Tuple[int, int], ...] = field(default=())


def _finite_max(v) -> float:
    v = np.abs(v[np.isfinite(v)])
    return float(v.max()) if v.size else 0.0


def kkt_residuals(problem: QpProblem, x, lam_A=None, lam_x=None) -> KktReport:
    """Stationarity, primal, dual and complementarity residuals (infinity norms)."""
    p = problem
    x = np.asarray(x, dtype=float)
    if x.shape != (p.n,):
        raise ValueError(f"candidate must have shape ({p.n},)")
    lam_A = np.zeros(p.m) if lam_A is None else np.asarray(lam_A, dtype=float)
    lam_x = np.zeros(p.n) if lam_x is None else np.asarray(lam_x, dtype=float)
    if lam_A.shape != (p.m,) or lam_x.shape != (p.n,):
        raise ValueError("multiplier vectors have the wrong length")

    stat = np.max(np.abs(p.H @ x + p.g - p.A.T @ lam_A - lam_x), initial=0.0)
    primal = p.max_violation(x)

    def dual_comp(lam, val, lo, hi):
        pos, neg = np.maximum(lam, 0.0), np.maximum(-lam, 0.0)
        lo_f, hi_f = np.isfinite(lo), np.isfinite(hi)
        dual = max(np.max(pos[~lo_f], initial=0.0), np.max(neg[~hi_f], initial=0.0))
        comp = max(np.max(np.abs(pos[lo_f] * (val[lo_f] - lo[lo_f])), initial=0.0),
                   np.max(np.abs(neg[hi_f] * (hi[hi_f] - val[hi_f])), initial=0.0))
        return dual, comp

    d1, c1 = dual_comp(lam_A, p.A @ x, p.lb_A, p.ub_A)
    d2, c2 = dual_comp(lam_x, x, p.lb, p.ub)
    h_norm = np.max(np.abs(p.H).sum(axis=1), initial=0.0)
    scale = 1.0 + np.max(np.abs(p.g), initial=0.0) + h_norm * np.max(np.abs(x), initial=0.0)
    pscale = 1.0 + max(_finite_max(p.lb), _finite_max(p.ub), _finite_max(p.lb_A), _finite_max(p.ub_A))
    return KktReport(float(stat), float(primal), float(max(d1, d2)), float(max(c1, c2)), float(scale), float(pscale))


class ActiveSetSolver:
    """Primal active-set method for convex QPs.

    The instance keeps no state between calls beyond its settings, but it is
    not meant to be shared across threads.
    """

    def __init__(self, tol: float = 1e-8, max_iter: int = 500):
        self.tol = tol
        self.max_iter = max_iter

    # -------------------------------------------------------------- public
    def solve(self, problem: QpProblem, x0=None) -> QpSolution:
        p = problem
        x = np.zeros(p.n) if x0 is None else np.asarray(x0, dtype=float).copy()
        if x.shape != (p.n,) or not np.all(np.isfinite(x)):
            x = np.zeros(p.n)
        x = np.clip(x, p.lb, p.ub)
        feas_tol = self.tol * (1.0 + max(_finite_max(p.lb), _finite_max(p.ub),
                                         _finite_max(p.lb_A), _finite_max(p.ub_A)))
        used = 0
        if p.max_violation(x) > feas_tol:
            x, used, status = self._phase_one(p, x, feas_tol)
            if status != OPTIMAL:
                return self._finish(p, x, {}, [], status, used)
        x, wb, wr, status, it = self._iterate(p, x, self.max_iter - used)
        return self._finish(p, x, wb, wr, status, used + it)

    # ------------------------------------------------------------ phase 1
    def _phase_one(self, p: QpProblem, x, feas_tol):
        n = p.n
        rows, lo, hi = [], [], []
        for i in range(p.m):
            if np.isfinite(p.lb_A[i]):
                rows.append(np.append(p.A[i], 1.0))
                lo.append(p.lb_A[i])
                hi.append(np.inf)
            if np.isfinite(p.ub_A[i]):
                rows.append(np.append(p.A[i], -1.0))
                lo.append(-np.inf)
                hi.append(p.ub_A[i])
        aux = QpProblem(H=np.zeros((n + 1, n + 1)), g=np.append(np.zeros(n), 1.0),
                        A=np.array(rows).reshape(len(rows), n + 1), lb_A=np.array(lo), ub_A=np.array(hi),
                        lb=np.append(p.lb, 0.0), ub=np.append(p.ub, np.inf))
        t0 = p.max_violation(x) + feas_tol
        y, _, _, status, it = self._iterate(aux, np.append(x, t0), self.max_iter)
        x = y[:n]
        if status == OPTIMAL:
            status = OPTIMAL if p.max_violation(x) <= feas_tol else INFEASIBLE
        elif status != MAX_ITERATIONS:
            status = INFEASIBLE
        return x, it, status

    # ------------------------------------------------------------ phase 2
    def _iterate(self, p: QpProblem, x, max_iter):
        n = p.n
        H, g, A = p.H, p.g, p.A
        wb = {}  # fixed variable -> side
        for j in np.flatnonzero(x <= p.lb):
            wb[int(j)] = _LOWER
        for j in np.flatnonzero(x >= p.ub):
            wb.setdefault(int(j), _UPPER)
        for j, side in wb.items():
            x[j] = p.lb[j] if side == _LOWER else p.ub[j]
        wr = []  # list of (row, side)
        h_norm = np.max(np.abs(H).sum(axis=1), initial=0.0)
        at_min = False

        for it in range(1, max_iter + 1):
            grad = H @ x + g
            scale = 1.0 + np.max(np.abs(g), initial=0.0) + h_norm * np.max(np.abs(x), initial=0.0)
            free = np.ones(n, dtype=bool)
            free[list(wb)] = False
            fi = np.flatnonzero(free)
            row_idx = [r for r, _ in wr]
            Af = A[np.ix_(row_idx, fi)]

            if not at_min:
                if Af.shape[0]:
                    _, s, vt = np.linalg.svd(Af, full_matrices=True)
                    rank = int(np.sum(s > 1e-12 * max(s[0], 1e-300)))
                    Z = vt[rank:].T
                else:
                    Z = None
                Hff = H[np.ix_(fi, fi)]
                Hz = Hff if Z is None else Z.T @ Hff @ Z
                rz = grad[fi] if Z is None else Z.T @ grad[fi]
                if rz.size:
                    e, V = np.linalg.eigh(Hz)
                    emax = e[-1]
                    pos = e > _EIG_RTOL * emax if emax > 0 else np.zeros(e.size, dtype=bool)
                    c = V.T @ rz
                    null_c = c[~pos]
                    if np.linalg.norm(null_c) > 1e-12 * scale:
                        dz, newton = -V[:, ~pos] @ null_c, False
                    else:
                        dz, newton = -V[:, pos] @ (c[pos] / e[pos]), True
                    pf = dz if Z is None else Z @ dz
                else:
                    pf, newton = np.zeros(fi.size), True
                step = np.zeros(n)
                step[fi] = pf
                small = np.max(np.abs(step), initial=0.0) <= 1e-14 * (1.0 + np.max(np.abs(x), initial=0.0))
            if at_min or (newton and small):
                at_min = False
                lam_r, lam_b = self._multipliers(A, grad, wb, wr, fi, Af)
                worst, worst_val = None, 0.1 * self.tol * scale
                for (r, side), lam in zip(wr, lam_r):
                    bad = self._wrong_sign(lam, side, p.lb_A[r], p.ub_A[r])
                    if bad > worst_val:
                        worst, worst_val = ("row", r), bad
                for j, side in wb.items():
                    bad = self._wrong_sign(lam_b[j], side, p.lb[j], p.ub[j])
                    if bad > worst_val:
                        worst, worst_val = ("bound", j), bad
                if worst is None:
                    return x, wb, wr, OPTIMAL, it
                if worst[0] == "row":
                    wr = [(r, s) for r, s in wr if r != worst[1]]
                else:
                    del wb[worst[1]]
                continue

            alpha, block = self._ratio_test(p, x, step, wb, wr, 1.0 if newton else np.inf)
            if block is None and not newton:
                return x, wb, wr, UNBOUNDED, it
            x = x + alpha * step
            if block is None:
                at_min = True
                continue
            kind, idx, side = block
            if kind == "bound":
                wb[idx] = side
                x[idx] = p.lb[idx] if side == _LOWER else p.ub[idx]
            else:
                wr.append((idx, side))
        return x, wb, wr, MAX_ITERATIONS, max_iter

    @staticmethod
    def _wrong_sign(lam, side, lo, hi):
        if lo == hi:
            return 0.0
        return max(-lam, 0.0) if side == _LOWER else max(lam, 0.0)

    @staticmethod
    def _multipliers(A, grad, wb, wr, fi, Af):
        lam_r = np.zeros(len(wr))
        if wr:
            lam_r = np.linalg.lstsq(Af.T, grad[fi], rcond=None)[0] if fi.size else np.zeros(len(wr))
        resid = grad - (A[[r for r, _ in wr]].T @ lam_r if wr else 0.0)
        lam_b = np.zeros(grad.size)
        fixed = list(wb)
        lam_b[fixed] = resid[fixed]
        return lam_r, lam_b

    @staticmethod
    def _ratio_test(p: QpProblem, x, step, wb, wr, alpha_max):
        n = p.n
        pnorm = np.max(np.abs(step))
        best, block = alpha_max, None

        free = np.ones(n, dtype=bool)
        free[list(wb)] = False
        thresh = 1e-13 * pnorm
        with np.errstate(divide="ignore", invalid="ignore"):
            dec = free & (step < -thresh) & np.isfinite(p.lb)
            inc = free & (step > thresh) & np.isfinite(p.ub)
            a_lo = np.where(dec, (p.lb - x) / step, np.inf)
            a_hi = np.where(inc, (p.ub - x) / step, np.inf)
        for arr, side in ((a_lo, _LOWER), (a_hi, _UPPER)):
            j = int(np.argmin(arr))
            if arr[j] < best:
                best, block = max(arr[j], 0.0), ("bound", j, side)

        if p.m:
            inactive = np.ones(p.m, dtype=bool)
            inactive[[r for r, _ in wr]] = False
            ap = p.A @ step
            ax = p.A @ x
            rthresh = 1e-12 * pnorm * np.linalg.norm(p.A, axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                dec = inactive & (ap < -rthresh) & np.isfinite(p.lb_A)
                inc = inactive & (ap > rthresh) & np.isfinite(p.ub_A)
                a_lo = np.where(dec, (p.lb_A - ax) / ap, np.inf)
                a_hi = np.where(inc, (p.ub_A - ax) / ap, np.inf)
            for arr, side in ((a_lo, _LOWER), (a_hi, _UPPER)):
                i = int(np.argmin(arr))
                if arr[i] < best:
                    best, block = max(arr[i], 0.0), ("row", i, side)
        return best, block

    def _finish(self, p: QpProblem, x, wb, wr, status, iterations) -> QpSolution:
        grad = p.H @ x + p.g
        free = np.ones(p.n, dtype=bool)
        free[list(wb)] = False
        fi = np.flatnonzero(free)
        Af = p.A[np.ix_([r for r, _ in wr], fi)]
        lam_r, lam_x = self._multipliers(p.A, grad, wb, wr, fi, Af)
        lam_A = np.zeros(p.m)
        for (r, _), lam in zip(wr, lam_r):
            lam_A[r] = lam
        report = kkt_residuals(p, x, lam_A, lam_x)
        if status == OPTIMAL and report.total > self.tol:
            status = MAX_ITERATIONS if report.primal <= self.tol * report.primal_scale else INFEASIBLE
        return QpSolution(u_star=x, objective_value=p.objective(x), kkt_residual=report.total, status=status,
                          lam_A=lam_A, lam_x=lam_x, iterations=iterations, report=report,
                          active_bounds=tuple(sorted(wb.items())), active_rows=tuple(wr))


def solve(problem: QpProblem, tol: float = 1e-8, max_iter: int = 500, x0=None) -> QpSolution:
    return ActiveSetSolver(tol=tol, max_iter=max_iter).solve(problem, x0=x0)


def dump_problem(problem: QpProblem, path, solution: Optional[QpSolution] = None, note: str = "") -> Path:
    """Write a plain-text listing of a QP (and optionally its solution)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write(f"# QP dump n={problem.n} m={problem.m} {note}\n")
        for name in ("H", "g", "A", "lb_A", "ub_A", "lb", "ub"):
            val = np.atleast_2d(getattr(problem, name))
            fh.write(f"## {name} {val.shape[0]}x{val.shape[1]}\n")
            np.savetxt(fh, val, fmt="%.17g")
        if solution is not None:
            fh.write(f"## status {solution.status} iterations {solution.iterations} "
                     f"kkt {solution.kkt_residual:.3e}\n## u_star\n")
            np.savetxt(fh, np.atleast_2d(solution.u_star), fmt="%.17g")
    return path
