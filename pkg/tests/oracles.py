"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_discrete_lyapunov


def stationary_cov(phi: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve ``S = phi S phi' + q``."""
    return solve_discrete_lyapunov(phi, q)


def kalman_rts(y: np.ndarray, phi: np.ndarray, q: np.ndarray, r: np.ndarray, p0: np.ndarray):
    """Filter and fixed-interval smoother for ``a_{t+1} = phi a_t + w``, ``y_t = a_t + v``.

    The initial state is ``N(0, p0)``.  Returns ``(smoothed, filtered)``.
    """
    T, p = y.shape
    a_pred = np.zeros((T, p))
    P_pred = np.zeros((T, p, p))
    a_filt = np.zeros((T, p))
    P_filt = np.zeros((T, p, p))
    P_pred[0] = p0
    for t in range(T):
        S = P_pred[t] + r
        K = np.linalg.solve(S.T, P_pred[t].T).T
        a_filt[t] = a_pred[t] + K @ (y[t] - a_pred[t])
        P_filt[t] = (np.eye(p) - K) @ P_pred[t]
        if t + 1 < T:
            a_pred[t + 1] = phi @ a_filt[t]
            P_pred[t + 1] = phi @ P_filt[t] @ phi.T + q
    a_s = a_filt.copy()
    for t in range(T - 2, -1, -1):
        J = P_filt[t] @ phi.T @ np.linalg.inv(P_pred[t + 1])
        a_s[t] = a_filt[t] + J @ (a_s[t + 1] - a_pred[t + 1])
    return a_s, a_filt


def kalman_predict(a_last: np.ndarray, phi: np.ndarray, horizon: int) -> np.ndarray:
    out = []
    a = a_last
    for _ in range(horizon):
        a = phi @ a
        out.append(a)
    return np.array(out)


def normal_equations(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``(X'X)^{-1} X'Y`` via an explicit inverse (deliberately not lstsq)."""
    return np.linalg.inv(X.T @ X) @ (X.T @ Y)


def grid_argmin(objective, lo: float = -10.0, hi: float = 10.0, step: float = 1e-5) -> float:
    grid = np.arange(lo, hi + step / 2, step)
    return float(grid[np.argmin(objective(grid))])


def scad_value(lam: float, a: float, t: np.ndarray) -> np.ndarray:
    t = np.abs(t)
    mid = -(t**2 - 2 * a * lam * t + lam**2) / (2 * (a - 1))
    return np.where(t <= lam, lam * t, np.where(t <= a * lam, mid, (a + 1) * lam**2 / 2))


def mcp_value(lam: float, b: float, t: np.ndarray) -> np.ndarray:
    t = np.abs(t)
    return np.where(t < b * lam, lam * t - t**2 / (2 * b), b * lam**2 / 2)


def penalty_array(family: str, lam: float, shape: float, t: np.ndarray) -> np.ndarray:
    if family == "lasso":
        return lam * np.abs(t)
    if family == "scad":
        return scad_value(lam, shape, t)
    return mcp_value(lam, shape, t)
