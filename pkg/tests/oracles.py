"""Independent reference implementations used only by the tests."""
import mpmath as mp
import numpy as np

from microneuro.qp import QpProblem


# ------------------------------------------------------------ transforms

def tau(axis, a):
    T = np.eye(4)
    T["xyz".index(axis), 3] = a
    return T


def rot(axis, a):
    c, s = np.cos(a), np.sin(a)
    T = np.eye(4)
    if axis == "z":
        T[:2, :2] = [[c, -s], [s, c]]
    elif axis == "y":
        T[0, 0], T[0, 2], T[2, 0], T[2, 2] = c, s, -s, c
    else:
        T[1:3, 1:3] = [[c, -s], [s, c]]
    return T


def tip_chain(phi, z_s):
    """Tip pose written out as the literal product of primitive transforms (theta != 0)."""
    z_b, th_s, ph_s, z_e, th_e, ph_e = phi
    T = tau("z", z_b) @ rot("z", ph_s)
    T = T @ tau("x", z_s / th_s) @ rot("y", th_s) @ tau("x", -z_s / th_s)
    T = T @ rot("z", ph_e)
    T = T @ tau("x", z_e / th_e) @ rot("y", th_e) @ tau("x", -z_e / th_e)
    return T


def camera_chain(phi, z_s, d):
    return tip_chain(phi, z_s) @ rot("z", -phi[2] - phi[5]) @ tau("y", -d)


def mp_tip_position(phi, z_s, dps=40):
    """Tip translation in arbitrary precision; valid for tiny nonzero bending angles."""
    with mp.workdps(dps):
        def t(axis, a):
            T = mp.eye(4)
            T["xyz".index(axis), 3] = a
            return T

        def r(axis, a):
            c, s = mp.cos(a), mp.sin(a)
            T = mp.eye(4)
            if axis == "z":
                T[0, 0], T[0, 1], T[1, 0], T[1, 1] = c, -s, s, c
            else:
                T[0, 0], T[0, 2], T[2, 0], T[2, 2] = c, s, -s, c
            return T

        z_b, th_s, ph_s, z_e, th_e, ph_e = [mp.mpf(float(v)) for v in phi]
        z_s = mp.mpf(float(z_s))
        T = t("z", z_b) * r("z", ph_s) * t("x", z_s / th_s) * r("y", th_s) * t("x", -z_s / th_s)
        T = T * r("z", ph_e) * t("x", z_e / th_e) * r("y", th_e) * t("x", -z_e / th_e)
        return np.array([float(T[i, 3]) for i in range(3)])


def mp_cable_angles(l1, l2, l3, rho, dps=50):
    """Bending and plane angles of one segment from its three cable lengths."""
    with mp.workdps(dps):
        l1, l2, l3, rho = (mp.mpf(str(v)) for v in (l1, l2, l3, rho))
        theta = 2 * mp.sqrt(l1 ** 2 + l2 ** 2 + l3 ** 2 - l1 * l2 - l2 * l3 - l1 * l3) / (3 * rho)
        phi = mp.atan2(l1 + l3 - 2 * l2, mp.sqrt(3) * (l3 - l1))
        return float(theta), float(phi)


# ------------------------------------------------------------ derivatives

def richardson(f, x, h=1e-3):
    """Second-level Richardson extrapolation of central differences, column by column."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = 1.0

        def D(s):
            return (np.asarray(f(x + s * e)) - np.asarray(f(x - s * e))) / (2 * s)

        d1, d2, d4 = D(h), D(h / 2), D(h / 4)
        r1 = (4 * d2 - d1) / 3
        r2 = (4 * d4 - d2) / 3
        cols.append((16 * r2 - r1) / 15)
    return np.column_stack(cols)


# ------------------------------------------------------------------- QP

def random_box_qps(rng, count, n=8):
    """Random PSD (some rank-deficient) box-constrained QPs with feasible finite boxes."""
    Hs, gs, lbs, ubs = [], [], [], []
    for _ in range(count):
        r = int(rng.integers(1, n + 1))
        B = rng.normal(size=(n, r))
        H = B @ B.T
        Hs.append(0.5 * (H + H.T))
        gs.append(rng.normal(scale=3.0, size=n))
        lo = rng.uniform(-2.0, 0.5, n)
        lbs.append(lo)
        ubs.append(lo + rng.uniform(0.1, 3.0, n))
    return np.array(Hs), np.array(gs), np.array(lbs), np.array(ubs)


def random_general_qp(r, n=8, m=6):
    """PSD QP with bounds and general rows, feasible by construction around a known point."""
    rank = int(r.integers(1, n + 1))
    B = r.normal(size=(n, rank))
    H = B @ B.T
    H = 0.5 * (H + H.T)
    g = r.normal(scale=3.0, size=n)
    x_feas = r.uniform(-0.5, 0.5, n)
    A = r.normal(size=(m, n))
    ax = A @ x_feas
    lb_A = ax - r.uniform(0.0, 1.0, m)
    ub_A = ax + r.uniform(0.0, 1.0, m)
    ub_A[r.random(m) < 0.3] = np.inf
    lb = x_feas - r.uniform(0.1, 2.0, n)
    ub = x_feas + r.uniform(0.1, 2.0, n)
    return QpProblem(H=H, g=g, A=A, lb_A=lb_A, ub_A=ub_A, lb=lb, ub=ub)


def projected_gradient_batch(H, g, lb, ub, iters=30000, tol=1e-12):
    """Accelerated projected gradient with adaptive restart, vectorized over problems."""
    L = np.linalg.eigvalsh(H)[:, -1][:, None] + 1e-12
    x = np.clip(np.zeros_like(g), lb, ub)
    y, t = x.copy(), np.ones((g.shape[0], 1))
    for _ in range(iters):
        grad = np.einsum("bij,bj->bi", H, y) + g
        x_new = np.clip(y - grad / L, lb, ub)
        restart = np.sum((y - x_new) * (x_new - x), axis=1, keepdims=True) > 0
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = np.where(restart, x_new, x_new + (t - 1) / t_new * (x_new - x))
        t = np.where(restart, 1.0, t_new)
        step = np.max(np.abs(x_new - x))
        x = x_new
        if step < tol:
            break
    obj = 0.5 * np.einsum("bi,bij,bj->b", x, H, x) + np.einsum("bi,bi->b", g, x)
    return x, obj
