"""Small data generators shared by the tests."""
import numpy as np
import pytest

from sparsemsv.panels import LogSqPanel


def as_logsq(x):
    """Wrap an arbitrary series as an already-transformed panel."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    mean = x.mean(axis=0)
    return LogSqPanel(x, x - mean, mean)


def simulate_var1(psi, T, seed, burn=100, scale=1.0):
    rng = np.random.default_rng(seed)
    p = psi.shape[0]
    x = np.zeros((T + burn, p))
    for t in range(1, T + burn):
        x[t] = psi @ x[t - 1] + scale * rng.standard_normal(p)
    return x[burn:]


def sparse_var5():
    """Stable 5-variable VAR(1) with 5 diagonal and 5 off-diagonal nonzeros."""
    psi = np.diag([0.5] * 5)
    for i, j, v in [(0, 1, 0.4), (1, 2, -0.4), (2, 3, 0.4), (3, 4, -0.4), (4, 0, 0.4)]:
        psi[i, j] = v
    return psi


ACCEPTANCE_KEY = pytest.StashKey[dict]()
