"""Reference conditional covariance models: GARCH(1,1) margins, CCC, scalar
DCC with correlation targeting, and orthogonal GARCH.

Returns are treated as zero-mean throughout.  All likelihoods are Gaussian
quasi-likelihoods maximized over an unconstrained reparameterization that
keeps ``omega > 0``, ``alpha, beta >= 0`` and ``alpha + beta < 0.999``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter
from scipy.special import expit, logit

from .errors import DataError, InsufficientSample, OptimFailure
from .io import atomic_write_text
from .smoother import CovSequence

MAX_PERSISTENCE = 0.999
ARCH_FLOOR = 1e-4
GARCH_STARTS = ((0.05, 0.90), (0.10, 0.80), (0.02, 0.95))
DCC_STARTS = ((0.02, 0.95), (0.05, 0.90), (0.01, 0.80))
SCHEMA_VERSION = 1
_LOG_2PI = np.log(2.0 * np.pi)


def _to_pair(x1: float, x2: float) -> tuple[float, float]:
    s = MAX_PERSISTENCE * expit(x1)
    a = s * expit(x2)
    return a, s - a


def _from_pair(a: float, b: float) -> tuple[float, float]:
    s = a + b
    return logit(s / MAX_PERSISTENCE), logit(a / s)


def _best_of(objective: Callable, starts: Sequence[np.ndarray], what: str):
    best = None
    for x0 in starts:
        res = minimize(objective, x0, method="BFGS")
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise OptimFailure(f"{what}: no start produced a finite likelihood")
    return best


@dataclass(frozen=True)
class GarchFit:
    omega: float
    alpha: float
    beta: float
    loglik: float
    h_path: np.ndarray
    last_y: float
    boundary: bool = False

    @property
    def persistence(self) -> float:
        return self.alpha + self.beta

    def forecast(self, horizon: int) -> np.ndarray:
        h = np.empty(horizon)
        h[0] = self.omega + self.alpha * self.last_y**2 + self.beta * self.h_path[-1]
        for l in range(1, horizon):
            h[l] = self.omega + self.persistence * h[l - 1]
        return h


def garch_variance(y: np.ndarray, omega: float, alpha: float, beta: float, h1: float) -> np.ndarray:
    """Conditional variances with ``h_1 = h1`` and the GARCH(1,1) recursion after."""
    h = np.empty(y.shape[0])
    h[0] = h1
    if y.shape[0] > 1:
        h[1:] = lfilter([1.0], [1.0, -beta], omega + alpha * y[:-1] ** 2, zi=[beta * h1])[0]
    return h


def garch_loglik(y: np.ndarray, omega: float, alpha: float, beta: float) -> float:
    y = np.asarray(y, dtype=float)
    h = garch_variance(y, omega, alpha, beta, float(np.mean(y * y)))
    if np.any(h <= 0):
        return -np.inf
    return float(-0.5 * np.sum(_LOG_2PI + np.log(h) + y * y / h))


def fit_garch11(y: np.ndarray) -> GarchFit:
    """Gaussian QML of a zero-mean GARCH(1,1); ``h_1`` is the sample variance."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 50:
        raise InsufficientSample(f"GARCH(1,1) needs at least 50 observations, got {y.size}")
    var = float(np.mean(y * y))
    if not var > 0:
        raise DataError("GARCH(1,1) needs positive sample variance")
    scale = np.sqrt(var)
    z = y / scale  # fit on unit scale, map omega back afterwards

    def nll(x):
        a, b = _to_pair(x[1], x[2])
        h = garch_variance(z, np.exp(x[0]), a, b, 1.0)
        return 0.5 * float(np.sum(np.log(h) + z * z / h))

    starts = [np.array([np.log(1 - a - b), *_from_pair(a, b)]) for a, b in GARCH_STARTS]
    res = _best_of(nll, starts, "GARCH(1,1)")
    a, b = _to_pair(res.x[1], res.x[2])
    omega = float(np.exp(res.x[0]) * var)
    if a < ARCH_FLOOR and garch_loglik(y, var, 0.0, 0.0) >= garch_loglik(y, omega, a, b) - 1e-6:
        # no ARCH effect: beta is unidentified, report the constant-variance point
        omega, a, b = var, 0.0, 0.0
    h = garch_variance(y, omega, a, b, var)
    boundary = a < 1e-6 or b < 1e-6 or a + b > MAX_PERSISTENCE - 1e-4
    return GarchFit(omega, float(a), float(b), garch_loglik(y, omega, a, b), h, float(y[-1]), bool(boundary))


def _fit_margins(y: np.ndarray) -> list[GarchFit]:
    return [fit_garch11(y[:, i]) for i in range(y.shape[1])]


def _dr_d(h: np.ndarray, R: np.ndarray) -> np.ndarray:
    """``D_t R_t D_t`` for a T x p variance path and one or T correlation matrices."""
    d = np.sqrt(h)
    return d[:, :, None] * R * d[:, None, :]


def _correlation(y: np.ndarray) -> np.ndarray:
    R = np.corrcoef(y, rowvar=False) if y.shape[1] > 1 else np.ones((1, 1))
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return R


@dataclass(frozen=True)
class CccFit:
    margins: list[GarchFit]
    R: np.ndarray

    @property
    def h(self) -> np.ndarray:
        return np.column_stack([g.h_path for g in self.margins])

    def covariances(self) -> CovSequence:
        return CovSequence.from_arrays(_dr_d(self.h, self.R[None]), "fitted", start=1)

    def forecast(self, horizon: int) -> CovSequence:
        h = np.column_stack([g.forecast(horizon) for g in self.margins])
        return CovSequence.from_arrays(_dr_d(h, self.R[None]), "forecast", start=len(self.margins[0].h_path) + 1)


def standardized_residuals(y: np.ndarray, margins: Sequence[GarchFit]) -> np.ndarray:
    return y / np.sqrt(np.column_stack([g.h_path for g in margins]))


def fit_ccc(y: np.ndarray) -> CccFit:
    """Two-step CCC: GARCH(1,1) margins, then the correlation of the standardized residuals."""
    y = np.asarray(getattr(y, "data", y), dtype=float)
    margins = _fit_margins(y)
    return CccFit(margins, _correlation(standardized_residuals(y, margins)))


def dcc_q_path(u: np.ndarray, qbar: np.ndarray, a: float, b: float) -> np.ndarray:
    """``Q_t = (1-a-b) Qbar + a u_{t-1} u_{t-1}' + b Q_{t-1}`` with ``Q_1 = Qbar``."""
    T, p = u.shape
    Q = np.empty((T, p, p))
    Q[0] = qbar
    if T > 1:
        drive = (1.0 - a - b) * qbar + a * (u[:-1, :, None] * u[:-1, None, :])
        Q[1:] = lfilter([1.0], [1.0, -b], drive, axis=0, zi=(b * qbar)[None])[0]
    return Q


def _normalize(Q: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.einsum("...ii->...i", Q))
    R = Q / (d[..., :, None] * d[..., None, :])
    idx = np.arange(Q.shape[-1])
    R[..., idx, idx] = 1.0
    return R


def dcc_correlation_loglik(u: np.ndarray, R: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(R)
    if np.any(sign <= 0):
        return -np.inf
    quad = np.einsum("ti,ti->t", u, np.linalg.solve(R, u[..., None])[..., 0])
    return float(-0.5 * np.sum(logdet + quad - np.einsum("ti,ti->t", u, u)))


@dataclass(frozen=True)
class DccFit:
    a: float
    b: float
    qbar: np.ndarray
    margins: list[GarchFit]
    u: np.ndarray
    loglik: float = float("nan")

    @property
    def h(self) -> np.ndarray:
        return np.column_stack([g.h_path for g in self.margins])

    def q_path(self) -> np.ndarray:
        return dcc_q_path(self.u, self.qbar, self.a, self.b)

    def correlations(self) -> np.ndarray:
        return _normalize(self.q_path())

    def covariances(self) -> CovSequence:
        return CovSequence.from_arrays(_dr_d(self.h, self.correlations()), "fitted", start=1)

    def forecast(self, horizon: int) -> CovSequence:
        Q_T = self.q_path()[-1]
        u_T = self.u[-1]
        base = (1.0 - self.a - self.b) * self.qbar
        Q = base + self.a * np.outer(u_T, u_T) + self.b * Q_T
        Rs = []
        for _ in range(horizon):
            R = _normalize(Q)
            Rs.append(R)
            Q = base + self.a * R + self.b * Q
        h = np.column_stack([g.forecast(horizon) for g in self.margins])
        return CovSequence.from_arrays(_dr_d(h, np.stack(Rs)), "forecast", start=self.u.shape[0] + 1)


def fit_dcc_scalar(y: np.ndarray, margins: Sequence[GarchFit] | None = None) -> DccFit:
    """Two-step scalar DCC; ``Qbar`` is the sample correlation of the standardized residuals."""
    y = np.asarray(getattr(y, "data", y), dtype=float)
    margins = list(margins) if margins is not None else _fit_margins(y)
    u = standardized_residuals(y, margins)
    qbar = _correlation(u)

    def nll(x):
        a, b = _to_pair(x[0], x[1])
        val = dcc_correlation_loglik(u, _normalize(dcc_q_path(u, qbar, a, b)))
        return -val if np.isfinite(val) else 1e300

    res = _best_of(nll, [np.array(_from_pair(a, b)) for a, b in DCC_STARTS], "DCC")
    a, b = _to_pair(res.x[0], res.x[1])
    return DccFit(float(a), float(b), qbar, margins, u, -float(res.fun))


@dataclass(frozen=True)
class OgarchFit:
    P: np.ndarray  # orthonormal loadings, columns are principal directions
    factors: list[GarchFit]

    def _compose(self, lam: np.ndarray) -> np.ndarray:
        return np.einsum("ik,tk,jk->tij", self.P, lam, self.P)

    def covariances(self) -> CovSequence:
        lam = np.column_stack([g.h_path for g in self.factors])
        return CovSequence.from_arrays(self._compose(lam), "fitted", start=1)

    def forecast(self, horizon: int) -> CovSequence:
        lam = np.column_stack([g.forecast(horizon) for g in self.factors])
        T = len(self.factors[0].h_path)
        return CovSequence.from_arrays(self._compose(lam), "forecast", start=T + 1)


def fit_ogarch(y: np.ndarray, K: int | None = None) -> OgarchFit:
    """PCA of the second-moment matrix, GARCH(1,1) on each of the ``K`` components."""
    y = np.asarray(getattr(y, "data", y), dtype=float)
    p = y.shape[1]
    K = p if K is None else K
    if not 1 <= K <= p:
        raise DataError(f"need 1 <= K <= p, got K={K}, p={p}")
    w, v = np.linalg.eigh(y.T @ y / y.shape[0])
    P = v[:, ::-1][:, :K]
    f = y @ P
    return OgarchFit(P, [fit_garch11(f[:, k]) for k in range(K)])


def forecast_baseline(model, horizon: int) -> CovSequence:
    if horizon < 1:
        raise DataError(f"horizon must be >= 1, got {horizon}")
    return model.forecast(horizon)


def _garch_to_dict(g: GarchFit) -> dict[str, Any]:
    return {"omega": g.omega, "alpha": g.alpha, "beta": g.beta, "loglik": g.loglik,
            "h_path": g.h_path.tolist(), "last_y": g.last_y, "boundary": g.boundary}


def _garch_from_dict(d: dict[str, Any]) -> GarchFit:
    return GarchFit(d["omega"], d["alpha"], d["beta"], d["loglik"], np.array(d["h_path"]),
                    d["last_y"], d["boundary"])


def baseline_to_dict(model) -> dict[str, Any]:
    out: dict[str, Any] = {"version": SCHEMA_VERSION}
    if isinstance(model, GarchFit):
        out.update(kind="garch11", **_garch_to_dict(model))
    elif isinstance(model, CccFit):
        out.update(kind="ccc", R=model.R.tolist(), margins=[_garch_to_dict(g) for g in model.margins])
    elif isinstance(model, DccFit):
        out.update(kind="dcc", a=model.a, b=model.b, qbar=model.qbar.tolist(), u=model.u.tolist(),
                   loglik=model.loglik, margins=[_garch_to_dict(g) for g in model.margins])
    elif isinstance(model, OgarchFit):
        out.update(kind="ogarch", P=model.P.tolist(), factors=[_garch_to_dict(g) for g in model.factors])
    else:
        raise DataError(f"cannot serialize {type(model).__name__}")
    return out


def baseline_from_dict(d: dict[str, Any]):
    if d.get("version") != SCHEMA_VERSION:
        raise DataError(f"unsupported baseline file version {d.get('version')}")
    kind = d.get("kind")
    if kind == "garch11":
        return _garch_from_dict(d)
    if kind == "ccc":
        return CccFit([_garch_from_dict(g) for g in d["margins"]], np.array(d["R"]))
    if kind == "dcc":
        return DccFit(d["a"], d["b"], np.array(d["qbar"]), [_garch_from_dict(g) for g in d["margins"]],
                      np.array(d["u"]), d["loglik"])
    if kind == "ogarch":
        return OgarchFit(np.array(d["P"]), [_garch_from_dict(g) for g in d["factors"]])
    raise DataError(f"unknown baseline kind {kind!r}")


def save_baseline(model, path: str | Path) -> None:
    atomic_write_text(path, json.dumps(baseline_to_dict(model)))


def load_baseline(path: str | Path):
    return baseline_from_dict(json.loads(Path(path).read_text()))
